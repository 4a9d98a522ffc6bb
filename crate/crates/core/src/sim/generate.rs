use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::calibrate::{calibrate_intercepts, CalibrationReport};
use super::config::SimConfig;
use super::schema::FeatureSchema;
use crate::util::{mix_seed, sigmoid};
use crate::{Arm, Error, Result};

const ARM_STREAM: u64 = 0xA5;
const PATIENT_STREAM: u64 = 0xB7;
/// Upper clamp on the log-mean keeps Poisson quantiles cheap (mean ≤ e⁶ ≈ 403).
const MAX_LOG_MEAN: f64 = 6.0;

/// One trial subject as seen by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: u64,
    pub features: Vec<f64>,
    pub arm: Arm,
    pub y: i64,
}

/// Hidden ground truth for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub id: u64,
    /// `E[Y(t) | x]` for every arm.
    pub mu: BTreeMap<Arm, f64>,
    /// Realised potential outcome `Y(t)` for every arm.
    pub y_pot: BTreeMap<Arm, i64>,
    /// `E[Y(t) | x] − E[Y(placebo) | x]`.
    pub cate: BTreeMap<Arm, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCohort {
    pub schema: FeatureSchema,
    pub records: Vec<PatientRecord>,
    pub oracle: Vec<OracleRow>,
    /// The configuration actually sampled from (after calibration).
    pub config: SimConfig,
    pub calibration: Option<CalibrationReport>,
}

impl OracleCohort {
    pub fn oracle_row(&self, id: u64) -> Result<&OracleRow> {
        // ids are dense 0..n in generation order
        self.oracle
            .get(id as usize)
            .filter(|row| row.id == id)
            .or_else(|| self.oracle.iter().find(|row| row.id == id))
            .ok_or_else(|| Error::Lookup(format!("no patient with id {id}")))
    }
}

/// Smallest `k` with `P(Poisson(mean) ≤ k) ≥ u`.
pub fn poisson_quantile(u: f64, mean: f64) -> i64 {
    if mean <= 0.0 {
        return 0;
    }
    let mut k = 0i64;
    let mut pmf = (-mean).exp();
    let mut cdf = pmf;
    while cdf < u {
        k += 1;
        pmf *= mean / k as f64;
        cdf += pmf;
        if pmf == 0.0 && k as f64 > mean {
            break;
        }
    }
    k
}

/// `P(Poisson(mean) < 3)`.
pub(crate) fn meda_probability(mean: f64) -> f64 {
    (-mean).exp() * (1.0 + mean + 0.5 * mean * mean)
}

/// Raw features, their standardised counterparts, and the outcome uniform.
pub(crate) struct PatientDraw {
    pub raw: Vec<f64>,
    pub standardized: Vec<f64>,
    pub uniform: f64,
}

pub(crate) fn draw_patient<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> PatientDraw {
    let c = &cfg.clinical;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let age = (c.age_mean + c.age_std * std_normal.sample(rng)).clamp(18.0, 65.0);
    let sex = if rng.random::<f64>() < c.male_fraction { 1.0 } else { 0.0 };
    let edss = ((c.edss_mean + c.edss_std * std_normal.sample(rng)) * 2.0).round().clamp(0.0, 20.0) / 2.0;

    let ln_var = (1.0 + (c.t2vol_std / c.t2vol_mean).powi(2)).ln();
    let ln_mean = c.t2vol_mean.ln() - 0.5 * ln_var;
    let t2_z = std_normal.sample(rng);
    let t2vol = (ln_mean + ln_var.sqrt() * t2_z).exp();

    let excess = c.gad_std * c.gad_std - c.gad_mean;
    let gad_rate = if excess > 0.0 {
        let shape = c.gad_mean * c.gad_mean / excess;
        Gamma::new(shape, c.gad_mean / shape).expect("gamma parameters").sample(rng)
    } else {
        c.gad_mean
    };
    let gad = poisson_quantile(rng.random::<f64>(), gad_rate) as f64;

    let mut raw = vec![age, sex, edss, t2vol, gad];
    let mut standardized = vec![
        (age - c.age_mean) / c.age_std,
        (sex - c.male_fraction) / (c.male_fraction * (1.0 - c.male_fraction)).sqrt().max(1e-12),
        (edss - c.edss_mean) / c.edss_std,
        t2_z,
        gad.ln_1p() - c.gad_mean.ln_1p(),
    ];
    for _ in 0..cfg.latent_dim {
        let z = std_normal.sample(rng);
        raw.push(z);
        standardized.push(z);
    }
    let uniform = rng.random::<f64>();
    PatientDraw {
        raw,
        standardized,
        uniform,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Placebo log-mean `η₀(x)`.
pub(crate) fn baseline_log_mean(cfg: &SimConfig, z: &[f64]) -> f64 {
    cfg.baseline.intercept + dot(&cfg.baseline.coefficients, z)
}

/// Arm effect `δₜ(x)` on the log-mean scale (zero for placebo).
pub(crate) fn arm_effect(cfg: &SimConfig, arm: Arm, z: &[f64]) -> f64 {
    match cfg.effects.get(&arm) {
        Some(e) if !arm.is_placebo() => e.intercept - e.magnitude * sigmoid(dot(&e.weights, z)),
        _ => 0.0,
    }
}

pub(crate) fn arm_mean(log_mean: f64) -> f64 {
    log_mean.min(MAX_LOG_MEAN).exp()
}

/// `exp(η₀ + δ) − exp(η₀)`: the CATE implied by two log-means.
pub fn cate_from_log_means(baseline: f64, effect: f64) -> f64 {
    arm_mean(baseline + effect) - arm_mean(baseline)
}

/// Samples a cohort, calibrating intercepts first when `meda_targets` is set.
pub fn simulate_cohort(config: &SimConfig) -> Result<OracleCohort> {
    config.validate()?;
    let (cfg, calibration) = match config.meda_targets {
        Some(_) => {
            let (cfg, report) = calibrate_intercepts(config)?;
            (cfg, Some(report))
        }
        None => (config.clone(), None),
    };

    let mut arms: Vec<Arm> = cfg
        .arm_sizes
        .iter()
        .flat_map(|(&arm, &n)| std::iter::repeat_n(arm, n))
        .collect();
    let mut arm_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, ARM_STREAM));
    arms.shuffle(&mut arm_rng);

    let cohort_arms = cfg.arms();
    let patient_seed = mix_seed(cfg.seed, PATIENT_STREAM);
    let mut records = Vec::with_capacity(arms.len());
    let mut oracle = Vec::with_capacity(arms.len());
    for (i, &assigned) in arms.iter().enumerate() {
        let id = i as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(patient_seed);
        rng.set_stream(id);
        let draw = draw_patient(&cfg, &mut rng);

        let eta0 = baseline_log_mean(&cfg, &draw.standardized);
        let mut mu = BTreeMap::new();
        let mut y_pot = BTreeMap::new();
        let mut cate = BTreeMap::new();
        let mu0 = arm_mean(eta0);
        for &arm in &cohort_arms {
            let m = arm_mean(eta0 + arm_effect(&cfg, arm, &draw.standardized));
            mu.insert(arm, m);
            y_pot.insert(arm, poisson_quantile(draw.uniform, m));
            cate.insert(arm, if arm.is_placebo() { 0.0 } else { m - mu0 });
        }
        records.push(PatientRecord {
            id,
            features: draw.raw,
            arm: assigned,
            y: y_pot[&assigned],
        });
        oracle.push(OracleRow { id, mu, y_pot, cate });
    }

    Ok(OracleCohort {
        schema: cfg.schema(),
        records,
        oracle,
        config: cfg,
        calibration,
    })
}

/// True CATE of `arm` versus placebo for patient `id`.
pub fn true_cate(cohort: &OracleCohort, arm: Arm, id: u64) -> Result<f64> {
    if arm.is_placebo() {
        return Err(Error::Parameter("true CATE is defined against placebo; pass a treatment arm".into()));
    }
    let row = cohort.oracle_row(id)?;
    row.cate
        .get(&arm)
        .copied()
        .ok_or_else(|| Error::Lookup(format!("arm {arm} is not part of this cohort")))
}
