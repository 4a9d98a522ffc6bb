use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::generate::{arm_effect, arm_mean, baseline_log_mean, draw_patient, meda_probability};
use crate::util::mix_seed;
use crate::{Arm, Error, Result};

/// Size of the probe cohort used to calibrate MEDA fractions.
pub const PROBE_SIZE: usize = 50_000;
/// Accepted distance between probe and target MEDA fraction.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;

const PROBE_STREAM: u64 = 0xC3;
const LOWER_BOUND: f64 = -12.0;
const PLACEBO_UPPER_BOUND: f64 = 8.0;
const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmCalibration {
    pub target: f64,
    /// Placebo: baseline intercept. Treatments: the arm's log-mean shift.
    pub intercept: f64,
    pub probe_fraction: f64,
    /// True when the solution sits on the search bound (e.g. a target of 1.0).
    pub clamped: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub probe_size: usize,
    pub arms: BTreeMap<Arm, ArmCalibration>,
}

struct Probe {
    /// Baseline linear predictor without the intercept.
    linear: Vec<f64>,
    uniforms: Vec<f64>,
    standardized: Vec<Vec<f64>>,
}

impl Probe {
    fn new(cfg: &SimConfig, size: usize) -> Self {
        let seed = mix_seed(cfg.seed, PROBE_STREAM);
        let mut linear = Vec::with_capacity(size);
        let mut uniforms = Vec::with_capacity(size);
        let mut standardized = Vec::with_capacity(size);
        for i in 0..size {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let draw = draw_patient(cfg, &mut rng);
            linear.push(baseline_log_mean(cfg, &draw.standardized) - cfg.baseline.intercept);
            uniforms.push(draw.uniform);
            standardized.push(draw.standardized);
        }
        Self {
            linear,
            uniforms,
            standardized,
        }
    }

    /// Empirical MEDA fraction when every patient's log-mean is `offset + shift[i]`.
    /// Uses the same uniforms for every evaluation, so it is monotone in `offset`.
    fn fraction(&self, offset: f64, shift: &[f64]) -> f64 {
        let hits = self
            .uniforms
            .iter()
            .zip(shift)
            .filter(|(&u, &s)| meda_probability(arm_mean(offset + s)) >= u)
            .count();
        hits as f64 / self.uniforms.len() as f64
    }
}

/// Bisection on a decreasing step function `f` for `f(x) ≈ target` on `[lo, hi]`.
fn bisect(arm: Arm, target: f64, mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Result<ArmCalibration> {
    let (bound_lo, bound_hi) = (lo, hi);
    let f_lo = f(lo);
    if target >= 1.0 {
        // a MEDA fraction of exactly 1 needs an infinitely negative log-mean
        return Ok(ArmCalibration {
            target,
            intercept: bound_lo,
            probe_fraction: f_lo,
            clamped: true,
            iterations: 0,
        });
    }
    let f_hi = f(hi);
    if f_lo < target - CALIBRATION_TOLERANCE || f_hi > target + CALIBRATION_TOLERANCE {
        return Err(Error::Calibration {
            arm: arm.to_string(),
            message: format!(
                "target MEDA fraction {target} not bracketed: probe fraction is {f_lo:.4} at {lo} and {f_hi:.4} at {hi}"
            ),
        });
    }
    let mut best = if (f_lo - target).abs() <= (f_hi - target).abs() {
        (lo, f_lo)
    } else {
        (hi, f_hi)
    };
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS && (best.1 - target).abs() > 5e-4 && hi - lo > 1e-10 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let value = f(mid);
        if (value - target).abs() < (best.1 - target).abs() {
            best = (mid, value);
        }
        if value > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (intercept, probe_fraction) = best;
    if (probe_fraction - target).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration {
            arm: arm.to_string(),
            message: format!("best probe fraction {probe_fraction:.4} misses target {target}"),
        });
    }
    Ok(ArmCalibration {
        target,
        intercept,
        probe_fraction,
        clamped: intercept <= bound_lo + 1e-9 || intercept >= bound_hi - 1e-9,
        iterations,
    })
}

/// Sets the baseline intercept (placebo) and each treatment's log-mean shift so
/// that a probe cohort of [`PROBE_SIZE`] patients hits the configured MEDA fractions.
pub fn calibrate_intercepts(config: &SimConfig) -> Result<(SimConfig, CalibrationReport)> {
    calibrate_with_probe(config, PROBE_SIZE)
}

pub(crate) fn calibrate_with_probe(config: &SimConfig, probe_size: usize) -> Result<(SimConfig, CalibrationReport)> {
    config.validate()?;
    let targets = config
        .meda_targets
        .clone()
        .ok_or_else(|| Error::Config("calibration needs sim.meda_targets".into()))?;
    let mut cfg = config.clone();
    let probe = Probe::new(&cfg, probe_size);
    let mut arms = BTreeMap::new();

    if let Some(&target) = targets.get(&Arm::Placebo) {
        let cal = bisect(Arm::Placebo, target, LOWER_BOUND, PLACEBO_UPPER_BOUND, |a| {
            probe.fraction(a, &probe.linear)
        })?;
        cfg.baseline.intercept = cal.intercept;
        arms.insert(Arm::Placebo, cal);
    }

    for (&arm, &target) in targets.iter().filter(|(a, _)| !a.is_placebo()) {
        // heterogeneous part of the effect, intercept excluded
        let mut zero_shift = cfg.clone();
        zero_shift.effects.get_mut(&arm).expect("validated").intercept = 0.0;
        let shifted: Vec<f64> = probe
            .standardized
            .iter()
            .zip(&probe.linear)
            .map(|(z, lin)| cfg.baseline.intercept + lin + arm_effect(&zero_shift, arm, z))
            .collect();
        let cal = bisect(arm, target, LOWER_BOUND, 0.0, |alpha| probe.fraction(alpha, &shifted))?;
        cfg.effects.get_mut(&arm).expect("validated").intercept = cal.intercept;
        arms.insert(arm, cal);
    }

    Ok((cfg, CalibrationReport { probe_size, arms }))
}
