mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use upliftforge::model::FeatureSet;
use upliftforge::nn::LossKind;
use upliftforge::Error;

use commands::Subject;

pub const THREADS_ENV: &str = "UPLIFTFORGE_THREADS";

/// Multi-arm treatment-effect estimation: simulate cohorts, train nested-CV
/// ensembles, evaluate them, recommend treatments and serve predictions.
#[derive(Debug, Parser)]
#[command(name = "upliftforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides both the simulator and the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Training loss: log-mse or meda-bce.
    #[arg(long)]
    loss: Option<LossKind>,
    /// Feature set: all, clinical or latent.
    #[arg(long)]
    features: Option<FeatureSet>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic cohort with its potential-outcome oracle.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the nested cross-validation ensemble on a cohort.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// records.csv, or the directory holding it.
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics, uplift tables and policy curves from pooled predictions.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// pooled_predictions.csv, or the training directory holding it.
        #[arg(long)]
        predictions: PathBuf,
        /// oracle.jsonl, or the cohort directory holding it.
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Needed only when the training provenance is not next to the table.
        #[arg(long)]
        loss: Option<LossKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Profile one patient and recommend a treatment.
    Recommend {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training directory with models/ and fold_plan.json.
        #[arg(long)]
        models: PathBuf,
        /// JSON object of named feature values.
        #[arg(long, conflicts_with = "patient")]
        input: Option<PathBuf>,
        /// A feature value as name=value; repeatable and applied over --input.
        #[arg(long = "set", value_name = "NAME=VALUE", conflicts_with = "patient")]
        set: Vec<String>,
        /// A cohort patient, predicted by the models that held it out.
        #[arg(long, requires = "cohort")]
        patient: Option<u64>,
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Incremental risk per risk class.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        lambda: f64,
        /// Also write recommendation.json and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve profiles and recommendations over HTTP.
    Serve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        models: PathBuf,
        /// records.csv, or the cohort directory holding it.
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// simulate, train and evaluate into one directory.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { cfg, out } => {
            let c = commands::resolve_config(cfg.config.as_deref(), cfg.seed, None, None)?;
            commands::simulate(&c, &out)
        }
        Command::Train { cfg, model, cohort, out } => {
            let c = commands::resolve_config(cfg.config.as_deref(), cfg.seed, model.loss, model.features)?;
            commands::train(&c, &cohort, &out)
        }
        Command::Evaluate {
            cfg,
            predictions,
            oracle,
            loss,
            out,
        } => {
            let c = commands::resolve_config(cfg.config.as_deref(), cfg.seed, None, None)?;
            commands::evaluate_cmd(&c, &predictions, oracle.as_deref(), loss, &out)
        }
        Command::Recommend {
            cfg,
            models,
            input,
            set,
            patient,
            cohort,
            lambda,
            out,
        } => {
            let c = commands::resolve_config(cfg.config.as_deref(), cfg.seed, None, None)?;
            let subject = match (patient, cohort) {
                (Some(id), Some(cohort)) => Subject::Patient { id, cohort },
                _ => Subject::Features(commands::collect_features(input.as_deref(), &set)?),
            };
            commands::recommend(&c, &models, subject, lambda, out.as_deref())
        }
        Command::Serve { cfg, models, cohort, bind } => {
            let c = commands::resolve_config(cfg.config.as_deref(), cfg.seed, None, None)?;
            commands::serve(&c, &models, &cohort, &bind)
        }
        Command::Run { cfg, model, out } => {
            let c = commands::resolve_config(cfg.config.as_deref(), cfg.seed, model.loss, model.features)?;
            commands::run_all(&c, &out)
        }
    }
}

/// 3 configuration, 4 data, 5 training, 6 I/O, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Parameter(_) => 3,
                Error::Training { .. } | Error::Calibration { .. } => 5,
                Error::Io { .. } => 6,
                Error::Shape(_)
                | Error::Data(_)
                | Error::Lookup(_)
                | Error::Format(_)
                | Error::Fold(_)
                | Error::Profile(_)
                | Error::Metric(_)
                | Error::Aggregation(_) => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 6;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let code = |e: Error| exit_code(&anyhow::Error::from(e));
        assert_eq!(code(Error::Config("x".into())), 3);
        assert_eq!(code(Error::Data("x".into())), 4);
        assert_eq!(code(Error::Training { path: "p".into(), message: "m".into() }), 5);
        let io = anyhow::Error::from(std::io::Error::other("disk")).context("writing");
        assert_eq!(exit_code(&io), 6);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
        let wrapped = anyhow::Error::from(Error::Lookup("id".into())).context("recommend");
        assert_eq!(exit_code(&wrapped), 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
