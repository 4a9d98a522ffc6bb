use super::loss::{loss_and_grad, LossKind};
use super::mlp::Mlp;
use crate::Result;

/// Something whose scalar loss can be differentiated both analytically and by
/// central differences, one `f32` parameter at a time.
pub trait GradCheckTarget {
    fn num_params(&self) -> usize;
    fn param(&self, idx: usize) -> f32;
    fn set_param(&mut self, idx: usize, value: f32);
    /// Analytic gradient over every parameter, dropout disabled.
    fn analytic_gradient(&self) -> Result<Vec<f64>>;
    /// Kink pattern of all ReLU-family units at the current parameters.
    fn base_pattern(&self) -> Result<Vec<bool>>;
    /// Loss and kink pattern after parameter `idx` was changed. Implementations
    /// may recompute only the part of the network downstream of `idx`.
    /// `None` means the loss never reads parameter `idx`.
    fn loss_after_change(&self, idx: usize) -> Result<Option<(f64, Vec<bool>)>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters whose ±ε perturbation moved a unit across an activation kink.
    pub skipped_at_kinks: usize,
    /// Parameters the loss does not read; their analytic gradient must be exactly zero.
    pub unread: usize,
    /// Parameter index, analytic and numeric gradient at the worst relative error.
    pub worst: Option<(usize, f64, f64)>,
}

/// Gradients below this magnitude are compared on absolute error, since a
/// central difference of an f64 loss carries roughly 1e-11 of roundoff at ε = 1e-4.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences over every parameter
/// and returns the worst relative error `|a - n| / max(|a|, |n|, DENOMINATOR_FLOOR)`.
pub fn finite_diff_gradcheck<T: GradCheckTarget + ?Sized>(target: &mut T, eps: f64) -> Result<GradCheckReport> {
    if !(1e-5..=1e-3).contains(&eps) {
        return Err(crate::Error::Parameter(format!("gradcheck step must lie in [1e-5, 1e-3], got {eps}")));
    }
    let analytic = target.analytic_gradient()?;
    let base = target.base_pattern()?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_at_kinks: 0,
        unread: 0,
        worst: None,
    };
    for (idx, &a) in analytic.iter().enumerate() {
        let theta = target.param(idx);
        let plus = (theta as f64 + eps) as f32;
        let minus = (theta as f64 - eps) as f32;

        target.set_param(idx, plus);
        let up = target.loss_after_change(idx)?;
        target.set_param(idx, minus);
        let down = target.loss_after_change(idx)?;
        target.set_param(idx, theta);

        let numeric = match (up, down) {
            (Some((lp, pp)), Some((lm, pm))) => {
                if pp != base || pm != base {
                    report.skipped_at_kinks += 1;
                    continue;
                }
                // the realised step, not 2ε: f32 rounding moves both endpoints
                (lp - lm) / (plus as f64 - minus as f64)
            }
            _ => {
                report.unread += 1;
                0.0
            }
        };
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = rel;
            report.worst = Some((idx, a, numeric));
        }
        report.checked += 1;
    }
    Ok(report)
}

/// A single-output [`Mlp`] evaluated on one sample.
#[derive(Debug, Clone)]
pub struct MlpSample {
    pub mlp: Mlp,
    pub input: Vec<f64>,
    pub target: i64,
    pub loss: LossKind,
}

impl GradCheckTarget for MlpSample {
    fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    fn param(&self, idx: usize) -> f32 {
        self.mlp.param(idx)
    }

    fn set_param(&mut self, idx: usize, value: f32) {
        self.mlp.set_param(idx, value);
    }

    fn analytic_gradient(&self) -> Result<Vec<f64>> {
        let trace = self.mlp.forward_trace::<rand_chacha::ChaCha8Rng>(&self.input, None)?;
        let (_, dl) = loss_and_grad(self.loss, trace.output[0], self.target)?;
        let mut grads = self.mlp.zero_grads();
        self.mlp.backward(&trace, &[dl], &mut grads);
        Ok(grads.flatten())
    }

    fn base_pattern(&self) -> Result<Vec<bool>> {
        Ok(self.mlp.forward_from(0, &self.input).1)
    }

    fn loss_after_change(&self, _idx: usize) -> Result<Option<(f64, Vec<bool>)>> {
        let (out, pattern) = self.mlp.forward_from(0, &self.input);
        let (loss, _) = loss_and_grad(self.loss, out[0], self.target)?;
        Ok(Some((loss, pattern)))
    }
}
