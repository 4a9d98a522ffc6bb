use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use upliftforge::cate::{build_profile, profile_report, ProfileReport, RiskPolicy};
use upliftforge::eval::{evaluate, write_report, EvaluationReport, PredictionTable};
use upliftforge::model::FeatureSet;
use upliftforge::nn::LossKind;
use upliftforge::pipeline::{recorded_loss, train_cohort, write_training_output, ModelSet, PipelineConfig, TrainingLayout};
use upliftforge::sim::{export_cohort, read_oracle, read_records, simulate_cohort, CohortPaths};
use upliftforge::util::sha256_hex;
use upliftforge::{Arm, Error};
use upliftforge_service::{AppState, ServiceState};

use crate::manifest::ManifestBuilder;

pub const SIM_CONFIG_FILE: &str = "sim_config.json";
pub const RECOMMENDATION_FILE: &str = "recommendation.json";

/// Reads a TOML configuration; absent keys take their defaults.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
    Ok(cfg)
}

/// Applies command-line overrides and validates the result.
pub fn resolve_config(
    path: Option<&Path>,
    seed: Option<u64>,
    loss: Option<LossKind>,
    features: Option<FeatureSet>,
) -> Result<PipelineConfig> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(l) = loss {
        cfg.train.loss = l;
    }
    if let Some(f) = features {
        cfg.train.features = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `dir/name` when `path` is a directory, else `path`.
fn file_in(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

pub fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let manifest = ManifestBuilder::start("simulate", cfg, cfg.sim.seed);
    create_dir(out)?;
    let cohort = simulate_cohort(&cfg.sim)?;
    let paths = CohortPaths::in_dir(out);
    export_cohort(&cohort, &paths)?;
    let sim_config = out.join(SIM_CONFIG_FILE);
    write_json(
        &sim_config,
        &serde_json::json!({ "sampled_config": cohort.config, "calibration": cohort.calibration }),
    )?;
    let m = manifest.finish(out, &[paths.records.clone(), paths.oracle.clone(), sim_config])?;
    println!("simulated {} patients into {}", cohort.records.len(), out.display());
    for arm in Arm::ALL {
        let rows: Vec<_> = cohort.records.iter().filter(|r| r.arm == arm).collect();
        if !rows.is_empty() {
            let meda = rows.iter().filter(|r| r.y < 3).count() as f64 / rows.len() as f64;
            println!("  {arm:<8} n={:<5} MEDA {:.1}%", rows.len(), meda * 100.0);
        }
    }
    println!("config digest {}", m.config_digest);
    Ok(())
}

pub fn train(cfg: &PipelineConfig, cohort: &Path, out: &Path) -> Result<()> {
    let records_path = file_in(cohort, "records.csv");
    let manifest = ManifestBuilder::start("train", cfg, cfg.train.seed).input(&records_path);
    let (schema, records) = read_records(&records_path)?;
    create_dir(out)?;
    log::info!(
        "training {} members on {} patients ({} loss, {:?} features)",
        cfg.folds.k_outer * cfg.folds.k_inner,
        records.len(),
        cfg.train.loss.as_str(),
        cfg.train.features
    );
    let output = train_cohort(&records, &schema, &cfg.train, cfg.folds)?;
    let written = write_training_output(&output, &TrainingLayout::new(out))?;
    let m = manifest.finish(out, &written)?;
    let epochs: Vec<usize> = output.run.members.iter().map(|m| m.history.epochs.len()).collect();
    println!(
        "trained {} members (epochs {}..{}), pooled {} predictions into {}",
        output.run.members.len(),
        epochs.iter().min().copied().unwrap_or(0),
        epochs.iter().max().copied().unwrap_or(0),
        output.table.len(),
        out.display()
    );
    println!("config digest {}", m.config_digest);
    Ok(())
}

pub fn evaluate_cmd(cfg: &PipelineConfig, predictions: &Path, oracle: Option<&Path>, loss: Option<LossKind>, out: &Path) -> Result<()> {
    let table_path = file_in(predictions, "pooled_predictions.csv");
    let run_dir = table_path.parent().unwrap_or(Path::new("."));
    let recorded = recorded_loss(&TrainingLayout::new(run_dir))?;
    let loss = match (recorded, loss) {
        (Some(r), Some(l)) if r != l => {
            return Err(Error::Config(format!(
                "--loss {} contradicts the loss {} recorded next to {}",
                l.as_str(),
                r.as_str(),
                table_path.display()
            ))
            .into())
        }
        (Some(r), _) => r,
        (None, Some(l)) => l,
        (None, None) => {
            return Err(Error::Config(format!(
                "no provenance.json next to {}; pass --loss",
                table_path.display()
            ))
            .into())
        }
    };
    let mut manifest = ManifestBuilder::start("evaluate", cfg, cfg.train.seed)
        .setting("loss", loss)
        .input(&table_path);
    let table = PredictionTable::read_csv(&table_path, loss)?;
    let oracle_rows = match oracle {
        Some(p) => {
            let p = file_in(p, "oracle.jsonl");
            manifest = manifest.input(&p);
            Some(read_oracle(&p)?)
        }
        None => None,
    };
    create_dir(out)?;
    let report = evaluate(&table, oracle_rows.as_deref(), &cfg.eval)?;
    let written = write_report(&report, &table, out)?;
    manifest.finish(out, &written)?;
    print_summary(&report);
    println!("report written to {}", out.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

fn print_summary(report: &EvaluationReport) {
    println!("{:<8} {:>6} {:>7} {:>7} {:>7} {:>8} {:>8}", "arm", "n", "AP", "random", "AUC", "MSE", "base MSE");
    for (arm, m) in &report.arms {
        println!(
            "{:<8} {:>6} {:>7} {:>7} {:>7} {:>8} {:>8}",
            arm.as_str(),
            m.n,
            fmt_opt(m.ap),
            fmt_opt(m.meda_fraction),
            fmt_opt(m.roc_auc),
            fmt_opt(m.regression.map(|r| r.mse)),
            fmt_opt(m.regression.map(|r| r.baseline_mse)),
        );
    }
    if let Some(rec) = &report.cate_recovery {
        println!("CATE recovery (pooled Pearson r): {}", fmt_opt(rec.pooled));
    }
    for note in &report.notes {
        println!("note: {note}");
    }
}

/// Where the features of a recommendation come from.
pub enum Subject {
    Features(BTreeMap<String, f64>),
    Patient { id: u64, cohort: PathBuf },
}

/// Parses `name=value` pairs and merges them over an optional JSON object file.
pub fn collect_features(input: Option<&Path>, pairs: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut named: BTreeMap<String, f64> = match input {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("{}: expected a JSON object of feature values: {e}", p.display())))?
        }
        None => BTreeMap::new(),
    };
    for pair in pairs {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects name=value, got '{pair}'")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("feature {k}: '{v}' is not a number")))?;
        named.insert(k.trim().to_string(), v);
    }
    Ok(named)
}

#[derive(Debug, Serialize)]
struct Recommendation<'a> {
    schema_version: u32,
    model_digest: &'a str,
    policy_digest: String,
    patient_id: Option<u64>,
    ensemble_members: usize,
    outer_fold: Option<usize>,
    #[serde(flatten)]
    report: &'a ProfileReport,
}

pub fn recommend(cfg: &PipelineConfig, models_dir: &Path, subject: Subject, lambda: f64, out: Option<&Path>) -> Result<()> {
    let mut manifest = ManifestBuilder::start("recommend", cfg, cfg.train.seed).setting("lambda", lambda);
    let policy = RiskPolicy::with_ne_class(lambda, cfg.eval.ne_risk_class)?;
    let models = ModelSet::load(models_dir)?;
    let (prediction, fold, patient_id) = match subject {
        Subject::Features(named) => {
            manifest = manifest.setting("features", &named);
            let raw = models
                .schema()
                .vector_from_named(named.iter().map(|(k, v)| (k.as_str(), *v)))?;
            (models.predict_serving(&raw)?, None, None)
        }
        Subject::Patient { id, cohort } => {
            let records_path = file_in(&cohort, "records.csv");
            manifest = manifest.setting("patient_id", id).input(&records_path);
            let (_, records) = read_records(&records_path)?;
            let record = records
                .iter()
                .find(|r| r.id == id)
                .ok_or_else(|| Error::Lookup(format!("patient {id} is not in {}", records_path.display())))?;
            let (p, fold) = models.predict_for_id(id, &record.features)?;
            (p, fold, Some(id))
        }
    };
    let profile = build_profile(&prediction, models.loss())?;
    let report = profile_report(&profile, &policy)?;
    let body = Recommendation {
        schema_version: upliftforge_service::api::SCHEMA_VERSION,
        model_digest: models.digest(),
        policy_digest: sha256_hex(serde_json::to_string(&policy)?.as_bytes()),
        patient_id,
        ensemble_members: if fold.is_some() { models.plan().k_inner } else { models.len() },
        outer_fold: fold,
        report: &report,
    };
    let text = serde_json::to_string_pretty(&body)? + "\n";
    if let Some(dir) = out {
        create_dir(dir)?;
        let path = dir.join(RECOMMENDATION_FILE);
        std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        manifest.setting("model_digest", models.digest()).finish(dir, &[path])?;
    }
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

pub fn serve(cfg: &PipelineConfig, models_dir: &Path, cohort: &Path, bind: &str) -> Result<()> {
    let models = ModelSet::load(models_dir)?;
    let records_path = file_in(cohort, "records.csv");
    let (schema, records) = read_records(&records_path)?;
    let policy = RiskPolicy::with_ne_class(0.0, cfg.eval.ne_risk_class)?;
    let state = AppState::new(ServiceState::new(models, &schema, records, policy)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting the async runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        log::info!("serving {} patients with model set {}", state.records().len(), state.models().digest());
        upliftforge_service::serve(listener, state, upliftforge_service::shutdown_signal())
            .await
            .context("serving HTTP")?;
        log::info!("stopped");
        Ok(())
    })
}

/// simulate → train → evaluate into `out/{cohort,training,report}`.
pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let (cohort, training, report) = (out.join("cohort"), out.join("training"), out.join("report"));
    simulate(cfg, &cohort)?;
    train(cfg, &cohort, &training)?;
    evaluate_cmd(cfg, &training, Some(&cohort), None, &report)
}
