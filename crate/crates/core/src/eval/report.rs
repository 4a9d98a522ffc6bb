use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classify::{average_precision, meda_score, roc_auc};
use super::histogram::count_histogram;
use super::policy::{policy_value_curve, PolicyPoint};
use super::recovery::{cate_recovery, CateRecovery};
use super::regress::{regression_metrics, RegressionMetrics};
use super::table::PredictionTable;
use super::uplift::{uplift_bins, UpliftOutcome, UpliftReport};
use crate::cate::{default_lambda_grid, RiskPolicy};
use crate::nn::LossKind;
use crate::sim::OracleRow;
use crate::util::population_std;
use crate::{Arm, Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub bins: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub ne_risk_class: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bins: vec![3, 5, 10],
            lambda_grid: default_lambda_grid(),
            ne_risk_class: RiskPolicy::DEFAULT_NE_CLASS,
        }
    }
}

/// Per-arm metrics. `*_fold_std` is the population std of the metric computed
/// separately within each outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub n: usize,
    pub meda_fraction: Option<f64>,
    pub ap: Option<f64>,
    pub ap_fold_std: Option<f64>,
    pub roc_auc: Option<f64>,
    pub roc_auc_fold_std: Option<f64>,
    pub regression: Option<RegressionMetrics>,
    pub mse_fold_std: Option<f64>,
    pub mae_fold_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub loss: LossKind,
    pub n: usize,
    pub arms: BTreeMap<Arm, ArmMetrics>,
    pub uplift: Vec<UpliftReport>,
    pub policy_risk_class: BTreeMap<Arm, f64>,
    pub policy_curve: Vec<PolicyPoint>,
    pub cate_recovery: Option<CateRecovery>,
    /// Metrics that are undefined for this table, with the reason.
    pub notes: Vec<String>,
}

fn fold_std(table: &PredictionTable, metric: impl Fn(&PredictionTable) -> Result<f64>) -> Option<f64> {
    let mut folds: Vec<usize> = table.rows().iter().filter_map(|r| r.outer_fold).collect();
    if folds.len() != table.len() {
        return None;
    }
    folds.sort_unstable();
    folds.dedup();
    let values: Option<Vec<f64>> = folds
        .iter()
        .map(|f| metric(&table.filter(|r| r.outer_fold == Some(*f))).ok())
        .collect();
    values.filter(|v| v.len() > 1).map(|v| population_std(&v))
}

fn arm_metrics(table: &PredictionTable, arm: Arm, notes: &mut Vec<String>) -> ArmMetrics {
    let ap_of = |t: &PredictionTable| {
        let (l, s) = meda_score(t, arm);
        average_precision(&l, &s)
    };
    let auc_of = |t: &PredictionTable| {
        let (l, s) = meda_score(t, arm);
        roc_auc(&l, &s)
    };
    let mut keep = |name: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{arm} {name}: {e}"));
            None
        }
    };
    let (labels, _) = meda_score(table, arm);
    let n = labels.len();
    let ap = keep("ap", ap_of(table));
    let auc = keep("roc_auc", auc_of(table));
    let regression = match table.loss() {
        LossKind::LogCountMSE => match regression_metrics(table, arm) {
            Ok(m) => Some(m),
            Err(e) => {
                notes.push(format!("{arm} regression: {e}"));
                None
            }
        },
        LossKind::MedaBCE => None,
    };
    let reg = regression.is_some();
    ArmMetrics {
        n,
        meda_fraction: (n > 0).then(|| labels.iter().filter(|l| **l).count() as f64 / n as f64),
        ap,
        ap_fold_std: ap.and_then(|_| fold_std(table, ap_of)),
        roc_auc: auc,
        roc_auc_fold_std: auc.and_then(|_| fold_std(table, auc_of)),
        regression,
        mse_fold_std: reg.then(|| fold_std(table, |t| Ok(regression_metrics(t, arm)?.mse))).flatten(),
        mae_fold_std: reg.then(|| fold_std(table, |t| Ok(regression_metrics(t, arm)?.mae))).flatten(),
    }
}

pub fn evaluate(table: &PredictionTable, oracle: Option<&[OracleRow]>, opts: &EvalOptions) -> Result<EvaluationReport> {
    if table.is_empty() {
        return Err(Error::Data("prediction table is empty".into()));
    }
    let mut notes = Vec::new();
    let arms = table
        .arms()
        .iter()
        .map(|a| (*a, arm_metrics(table, *a, &mut notes)))
        .collect();
    let mut uplift = Vec::new();
    for arm in table.arms().iter().filter(|a| !a.is_placebo()) {
        for outcome in [UpliftOutcome::Count, UpliftOutcome::Meda] {
            for &k in &opts.bins {
                match uplift_bins(table, *arm, k, outcome) {
                    Ok(r) => uplift.push(r),
                    Err(e) => notes.push(format!("{arm} uplift {} k={k}: {e}", outcome.as_str())),
                }
            }
        }
    }
    let policy = RiskPolicy::with_ne_class(0.0, opts.ne_risk_class)?;
    let policy_curve = policy_value_curve(table, &policy, &opts.lambda_grid)?;
    let cate_recovery = oracle.map(|o| cate_recovery(table, o)).transpose()?;
    if let Some(r) = &cate_recovery {
        if r.pooled.is_none() {
            notes.push("cate recovery: correlation undefined (zero variance in estimated or true CATE)".into());
        }
    }
    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        loss: table.loss(),
        n: table.len(),
        arms,
        uplift,
        policy_risk_class: policy.risk_class,
        policy_curve,
        cate_recovery,
        notes,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn histogram_csv(table: &PredictionTable) -> String {
    let all = count_histogram(table, None);
    let per: Vec<Vec<usize>> = table.arms().iter().map(|a| count_histogram(table, Some(*a))).collect();
    let mut out = String::from("count,all");
    for a in table.arms() {
        write!(out, ",{a}").expect("string write");
    }
    out.push('\n');
    for (c, n) in all.iter().enumerate() {
        write!(out, "{c},{n}").expect("string write");
        for h in &per {
            write!(out, ",{}", h.get(c).unwrap_or(&0)).expect("string write");
        }
        out.push('\n');
    }
    out
}

fn uplift_csv(reports: &[&UpliftReport]) -> String {
    let mut out = String::from(
        "arm,bin,tau_min,tau_max,n_treated,n_placebo,mean_treated,mean_placebo,difference,p_value\n",
    );
    for r in reports {
        for b in r.bins.iter().chain(std::iter::once(&r.whole_group)) {
            let bin = if b.bin == r.k { "all".to_string() } else { b.bin.to_string() };
            writeln!(
                out,
                "{},{bin},{},{},{},{},{},{},{},{}",
                r.arm,
                b.tau_min,
                b.tau_max,
                b.n_treated,
                b.n_placebo,
                opt(b.mean_treated),
                opt(b.mean_placebo),
                opt(b.difference),
                opt(b.p_value)
            )
            .expect("string write");
        }
    }
    out
}

fn policy_csv(points: &[PolicyPoint]) -> String {
    let mut out = String::from("lambda,followed,not_followed,random,n_followed,n_not_followed\n");
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.lambda,
            opt(p.followed),
            opt(p.not_followed),
            p.random,
            p.n_followed,
            p.n_not_followed
        )
        .expect("string write");
    }
    out
}

/// Report files as `(file name, contents)`, in a fixed order.
pub fn report_files(report: &EvaluationReport, table: &PredictionTable) -> Result<Vec<(String, String)>> {
    let mut files = vec![(
        "metrics.json".to_string(),
        serde_json::to_string_pretty(report).map_err(|e| Error::Data(format!("metrics: {e}")))? + "\n",
    )];
    files.push(("histograms.csv".into(), histogram_csv(table)));
    for outcome in [UpliftOutcome::Count, UpliftOutcome::Meda] {
        let mut ks: Vec<usize> = report.uplift.iter().map(|r| r.k).collect();
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            let sel: Vec<&UpliftReport> = report.uplift.iter().filter(|r| r.k == k && r.outcome == outcome).collect();
            files.push((format!("uplift_{}_k{k}.csv", outcome.as_str()), uplift_csv(&sel)));
        }
    }
    files.push(("policy_curve.csv".into(), policy_csv(&report.policy_curve)));
    Ok(files)
}

pub fn write_report(report: &EvaluationReport, table: &PredictionTable, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report_files(report, table)?
        .into_iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
