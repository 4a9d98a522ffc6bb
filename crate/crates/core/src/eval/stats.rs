use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::util::{mean, sample_variance};
use crate::{Error, Result};

/// A two-sided t test of a linear contrast of group means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub estimate: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Every group had zero variance; `p` follows the 1-or-0 convention.
    pub degenerate: bool,
}

/// Welch–Satterthwaite test of `Σ cᵢ·mean(groupᵢ) = 0`.
pub fn welch_contrast(groups: &[&[f64]], coefficients: &[f64]) -> Result<TTest> {
    if groups.len() != coefficients.len() || groups.is_empty() {
        return Err(Error::Shape("one coefficient per group is required".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::Metric(format!("Welch test needs ≥ 2 observations per group, got {}", g.len())));
    }
    let mut estimate = 0.0;
    let mut se2 = 0.0;
    let mut denom = 0.0;
    for (g, c) in groups.iter().zip(coefficients) {
        let n = g.len() as f64;
        estimate += c * mean(g);
        let term = c * c * sample_variance(g) / n;
        se2 += term;
        denom += term * term / (n - 1.0);
    }
    if se2 == 0.0 {
        let p = if estimate == 0.0 { 1.0 } else { 0.0 };
        let t = if estimate == 0.0 { 0.0 } else { estimate.signum() * f64::INFINITY };
        return Ok(TTest {
            estimate,
            t,
            df: f64::NAN,
            p,
            degenerate: true,
        });
    }
    let t = estimate / se2.sqrt();
    let df = se2 * se2 / denom;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Metric(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        estimate,
        t,
        df,
        p,
        degenerate: false,
    })
}

/// Welch's unequal-variance t test of `mean(a) − mean(b)`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    welch_contrast(&[a, b], &[1.0, -1.0])
}

/// Two-sided permutation p-value for the difference in means, `(1 + hits) / (1 + shuffles)`.
pub fn permutation_test(a: &[f64], b: &[f64], shuffles: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Metric("permutation test needs two non-empty groups".into()));
    }
    let observed = (mean(a) - mean(b)).abs();
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = pooled.iter().sum();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut hits = 0usize;
    for _ in 0..shuffles {
        pooled.shuffle(&mut rng);
        let sa: f64 = pooled[..a.len()].iter().sum();
        let d = (sa / na - (total - sa) / nb).abs();
        if d >= observed - 1e-12 * observed.max(1.0) {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + shuffles) as f64)
}
