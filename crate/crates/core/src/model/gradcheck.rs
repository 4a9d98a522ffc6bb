use rand_chacha::ChaCha8Rng;

use super::net::{MultiHeadNet, PreparedSample};
use crate::nn::{loss_and_grad, GradCheckTarget, MlpTrace};
use crate::sim::PatientRecord;
use crate::Result;

/// The full model (trunk and all heads, dropout off) evaluated on one record.
///
/// Parameters are indexed trunk first, then each head in `arms()` order.
/// Heads other than the record's own arm are never read by the loss.
#[derive(Debug, Clone)]
pub struct ModelSample {
    model: MultiHeadNet,
    sample: PreparedSample,
    trunk_trace: MlpTrace,
    head_trace: MlpTrace,
}

impl ModelSample {
    pub fn new(model: MultiHeadNet, record: &PatientRecord) -> Result<Self> {
        let sample = model
            .prepare(std::slice::from_ref(record))?
            .pop()
            .expect("one record in, one sample out");
        let (trunk_trace, head_trace) = traces(&model, &sample)?;
        Ok(Self {
            model,
            sample,
            trunk_trace,
            head_trace,
        })
    }

    pub fn model(&self) -> &MultiHeadNet {
        &self.model
    }

    fn head_of(&self, idx: usize) -> (usize, usize) {
        let mut local = idx - self.model.trunk.num_params();
        for (h, mlp) in self.model.heads.iter().enumerate() {
            if local < mlp.num_params() {
                return (h, local);
            }
            local -= mlp.num_params();
        }
        panic!("parameter index out of range");
    }

    fn loss_of(&self, output: f64) -> Result<f64> {
        Ok(loss_and_grad(self.model.spec.loss, output, self.sample.y)?.0)
    }
}

fn traces(model: &MultiHeadNet, s: &PreparedSample) -> Result<(MlpTrace, MlpTrace)> {
    let t = model.trunk.forward_trace::<ChaCha8Rng>(&s.trunk_input, None)?;
    let mut rep = t.output.clone();
    rep.extend_from_slice(&s.head_extra);
    let h = model.heads[s.head].forward_trace::<ChaCha8Rng>(&rep, None)?;
    Ok((t, h))
}

impl GradCheckTarget for ModelSample {
    fn num_params(&self) -> usize {
        self.model.num_params()
    }

    fn param(&self, idx: usize) -> f32 {
        let n = self.model.trunk.num_params();
        if idx < n {
            self.model.trunk.param(idx)
        } else {
            let (h, local) = self.head_of(idx);
            self.model.heads[h].param(local)
        }
    }

    fn set_param(&mut self, idx: usize, value: f32) {
        let n = self.model.trunk.num_params();
        if idx < n {
            self.model.trunk.set_param(idx, value);
        } else {
            let (h, local) = self.head_of(idx);
            self.model.heads[h].set_param(local, value);
        }
    }

    fn analytic_gradient(&self) -> Result<Vec<f64>> {
        let (t, h) = traces(&self.model, &self.sample)?;
        let (_, dl) = loss_and_grad(self.model.spec.loss, h.output[0], self.sample.y)?;
        let head = &self.model.heads[self.sample.head];
        let mut hg = head.zero_grads();
        let grad_rep = head.backward(&h, &[dl], &mut hg);
        let mut tg = self.model.trunk.zero_grads();
        self.model
            .trunk
            .backward(&t, &grad_rep[..self.model.trunk.out_dim()], &mut tg);
        let mut out = tg.flatten();
        for (i, mlp) in self.model.heads.iter().enumerate() {
            if i == self.sample.head {
                out.extend(hg.flatten());
            } else {
                out.extend(std::iter::repeat_n(0.0, mlp.num_params()));
            }
        }
        Ok(out)
    }

    fn base_pattern(&self) -> Result<Vec<bool>> {
        let (t, h) = traces(&self.model, &self.sample)?;
        let mut p = t.pattern(self.model.trunk.specs());
        p.extend(h.pattern(self.model.heads[self.sample.head].specs()));
        Ok(p)
    }

    fn loss_after_change(&self, idx: usize) -> Result<Option<(f64, Vec<bool>)>> {
        let trunk = &self.model.trunk;
        let head = &self.model.heads[self.sample.head];
        if idx < trunk.num_params() {
            let (rep, mut pattern) = trunk.forward_after_param_change(&self.trunk_trace, idx);
            let mut changed = rep.iter().zip(&self.trunk_trace.output).enumerate().filter(|(_, (a, b))| a != b);
            let (out, hp) = match (changed.next(), changed.next()) {
                (None, _) => (self.head_trace.output.clone(), self.head_trace.pattern(head.specs())),
                (Some((unit, (v, _))), None) => head.forward_after_input_change(&self.head_trace, unit, *v),
                _ => {
                    let mut input = rep;
                    input.extend_from_slice(&self.sample.head_extra);
                    head.forward_from(0, &input)
                }
            };
            pattern.extend(hp);
            return Ok(Some((self.loss_of(out[0])?, pattern)));
        }
        let (h, local) = self.head_of(idx);
        if h != self.sample.head {
            return Ok(None);
        }
        let mut pattern = self.trunk_trace.pattern(trunk.specs());
        let (out, hp) = head.forward_after_param_change(&self.head_trace, local);
        pattern.extend(hp);
        Ok(Some((self.loss_of(out[0])?, pattern)))
    }
}
