//! End-to-end orchestration: simulate → nested CV → evaluate, plus the on-disk
//! layout of a training run and the model set loaded back from it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cv::{collect_outer_predictions, make_fold_plan, run_nested_cv, CvRun, EnsemblePrediction, FoldOptions, FoldPlan};
use crate::eval::{evaluate, EvalOptions, EvaluationReport, PredictionTable};
use crate::model::{load_model, save_model, MultiHeadNet, TrainConfig};
use crate::nn::LossKind;
use crate::sim::{simulate_cohort, FeatureSchema, OracleCohort, PatientRecord, SimConfig};
use crate::util::{mix_seed, sha256_hex};
use crate::{Arm, Error, Result};

/// Every setting of a full run, with defaults for anything omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub folds: FoldOptions,
    pub eval: EvalOptions,
}

impl PipelineConfig {
    /// Sets the simulator seed and the training seed together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sim.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        if self.eval.bins.iter().any(|k| ![3, 5, 10].contains(k)) {
            return Err(Error::Config("eval.bins may only contain 3, 5 and 10".into()));
        }
        if self.eval.lambda_grid.windows(2).any(|w| !(w[0] <= w[1])) || self.eval.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("eval.lambda_grid must be ascending and non-negative".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }
}

/// Seed of the fold plan for a training seed.
pub fn fold_seed(train_seed: u64) -> u64 {
    mix_seed(train_seed, 0xF01D)
}

/// Output of [`train_cohort`].
#[derive(Debug, Clone)]
pub struct TrainingOutput {
    pub run: CvRun,
    pub table: PredictionTable,
}

pub fn train_cohort(
    records: &[PatientRecord],
    schema: &FeatureSchema,
    train: &TrainConfig,
    folds: FoldOptions,
) -> Result<TrainingOutput> {
    let plan = make_fold_plan(records, folds, fold_seed(train.seed))?;
    let run = run_nested_cv(records, schema, train, &plan)?;
    let table = collect_outer_predictions(&run)?;
    Ok(TrainingOutput { run, table })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub cohort: OracleCohort,
    pub training: TrainingOutput,
    pub report: EvaluationReport,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let cohort = simulate_cohort(&cfg.sim)?;
    let training = train_cohort(&cohort.records, &cohort.schema, &cfg.train, cfg.folds)?;
    let report = evaluate(&training.table, Some(&cohort.oracle), &cfg.eval)?;
    Ok(PipelineOutput {
        cohort,
        training,
        report,
    })
}

/// File names inside a training output directory.
pub struct TrainingLayout {
    pub dir: PathBuf,
}

impl TrainingLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn models_dir(&self) -> PathBuf {
        self.dir.join("models")
    }

    pub fn model(&self, outer: usize, inner: usize) -> PathBuf {
        self.models_dir().join(format!("outer{outer}_inner{inner}.ufm"))
    }

    pub fn plan(&self) -> PathBuf {
        self.dir.join("fold_plan.json")
    }

    pub fn predictions(&self) -> PathBuf {
        self.dir.join("pooled_predictions.csv")
    }

    pub fn provenance(&self) -> PathBuf {
        self.dir.join("provenance.json")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes models, fold plan, pooled table and provenance; returns the paths written.
pub fn write_training_output(out: &TrainingOutput, layout: &TrainingLayout) -> Result<Vec<PathBuf>> {
    let models = layout.models_dir();
    std::fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
    let mut written = Vec::new();
    for m in &out.run.members {
        let path = layout.model(m.outer, m.inner);
        save_model(&m.model, &path)?;
        written.push(path);
    }
    write_json(&layout.plan(), &out.run.plan)?;
    written.push(layout.plan());
    out.table.write_csv(&layout.predictions())?;
    written.push(layout.predictions());
    write_json(&layout.provenance(), &out.run.provenance())?;
    written.push(layout.provenance());
    Ok(written)
}

/// Loss kind recorded in a training directory's provenance, if present.
pub fn recorded_loss(layout: &TrainingLayout) -> Result<Option<LossKind>> {
    let path = layout.provenance();
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    v.get("loss")
        .and_then(|l| l.as_str())
        .map(str::parse)
        .transpose()
        .map_err(|e: Error| Error::Data(format!("{}: {e}", path.display())))
}

/// The trained members of a run, loaded from disk.
#[derive(Debug, Clone)]
pub struct ModelSet {
    members: BTreeMap<(usize, usize), MultiHeadNet>,
    plan: FoldPlan,
    digest: String,
}

impl ModelSet {
    pub fn from_run(run: &CvRun) -> Result<Self> {
        let members = run.members.iter().map(|m| ((m.outer, m.inner), m.model.clone())).collect();
        Self::new(members, run.plan.clone())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let layout = TrainingLayout::new(dir);
        let plan_path = layout.plan();
        let text = std::fs::read_to_string(&plan_path).map_err(|e| Error::io(&plan_path, e))?;
        let plan: FoldPlan =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", plan_path.display())))?;
        let mut members = BTreeMap::new();
        for outer in 0..plan.k_outer {
            for inner in 0..plan.k_inner {
                members.insert((outer, inner), load_model(&layout.model(outer, inner))?);
            }
        }
        Self::new(members, plan)
    }

    fn new(members: BTreeMap<(usize, usize), MultiHeadNet>, plan: FoldPlan) -> Result<Self> {
        let first = members
            .values()
            .next()
            .ok_or_else(|| Error::Data("model set is empty".into()))?;
        let (loss, schema, arms) = (first.spec().loss, first.schema().clone(), first.arms().to_vec());
        let mut sorted_arms = arms.clone();
        sorted_arms.sort();
        for ((o, i), m) in &members {
            let mut a = m.arms().to_vec();
            a.sort();
            if m.spec().loss != loss || m.schema() != &schema || a != sorted_arms {
                return Err(Error::Data(format!("model outer{o}_inner{i} disagrees with the rest of the set")));
            }
        }
        for f in 0..plan.k_outer {
            if !(0..plan.k_inner).all(|i| members.contains_key(&(f, i))) {
                return Err(Error::Data(format!("model set lacks members of outer fold {f}")));
            }
        }
        let digests: Vec<String> = members.values().map(MultiHeadNet::digest).collect();
        Ok(Self {
            digest: sha256_hex(digests.join("\n").as_bytes()),
            members,
            plan,
        })
    }

    /// Combined digest of every member file.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn loss(&self) -> LossKind {
        self.first().spec().loss
    }

    pub fn schema(&self) -> &FeatureSchema {
        self.first().schema()
    }

    pub fn arms(&self) -> Vec<Arm> {
        let mut a = self.first().arms().to_vec();
        a.sort();
        a
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn plan(&self) -> &FoldPlan {
        &self.plan
    }

    fn first(&self) -> &MultiHeadNet {
        self.members.values().next().expect("model set is non-empty")
    }

    /// Outer fold in which `id` was held out, if the id was part of training.
    pub fn outer_fold_of(&self, id: u64) -> Option<usize> {
        self.plan.outer.get(&id).copied()
    }

    fn ensemble<'a>(&self, models: impl Iterator<Item = &'a MultiHeadNet>, raw: &[f64]) -> Result<EnsemblePrediction> {
        let preds = models.map(|m| m.predict_all_heads(raw)).collect::<Result<Vec<_>>>()?;
        EnsemblePrediction::from_members(&preds)
    }

    /// Ensemble of the members that held `id` out; falls back to every member for unknown ids.
    pub fn predict_for_id(&self, id: u64, raw: &[f64]) -> Result<(EnsemblePrediction, Option<usize>)> {
        match self.outer_fold_of(id) {
            Some(f) => {
                let models = self.members.iter().filter(|((o, _), _)| *o == f).map(|(_, m)| m);
                Ok((self.ensemble(models, raw)?, Some(f)))
            }
            None => Ok((self.predict_serving(raw)?, None)),
        }
    }

    /// Ensemble of every member, for patients outside the training cohort.
    pub fn predict_serving(&self, raw: &[f64]) -> Result<EnsemblePrediction> {
        self.ensemble(self.members.values(), raw)
    }
}
