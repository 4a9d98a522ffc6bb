use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::net::{MultiHeadNet, Normalization, PreparedSample};
use crate::nn::{loss_and_grad, AdamWConfig, MlpGrads, MlpOptimizer};
use crate::sim::PatientRecord;
use crate::util::mix_seed;
use crate::{Arm, Error, Result};

/// AdamW state for the trunk and for every head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptimizer {
    trunk: MlpOptimizer,
    heads: Vec<MlpOptimizer>,
}

impl ModelOptimizer {
    pub fn new(model: &MultiHeadNet, hyper: AdamWConfig) -> Self {
        Self {
            trunk: MlpOptimizer::new(&model.trunk, hyper),
            heads: model.heads.iter().map(|h| MlpOptimizer::new(h, hyper)).collect(),
        }
    }

    pub fn trunk_steps(&self) -> u64 {
        self.trunk.steps()
    }

    /// Optimizer steps taken by the head at `index` (in `arms()` order).
    pub fn head_steps(&self, index: usize) -> u64 {
        self.heads[index].steps()
    }
}

/// Mean training loss of one epoch, overall and per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub overall: f64,
    pub per_arm: BTreeMap<Arm, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_loss_per_arm: BTreeMap<Arm, f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

struct Scratch {
    trunk: MlpGrads,
    heads: Vec<MlpGrads>,
    touched: Vec<bool>,
}

impl Scratch {
    fn new(model: &MultiHeadNet) -> Self {
        Self {
            trunk: model.trunk.zero_grads(),
            heads: model.heads.iter().map(|h| h.zero_grads()).collect(),
            touched: vec![false; model.heads.len()],
        }
    }
}

/// One masked minibatch update. Returns the per-sample losses.
fn train_batch(
    model: &mut MultiHeadNet,
    batch: &[&PreparedSample],
    optim: &mut ModelOptimizer,
    rng: &mut ChaCha8Rng,
    scratch: &mut Scratch,
) -> Result<Vec<f64>> {
    scratch.trunk.clear();
    for (g, t) in scratch.heads.iter_mut().zip(scratch.touched.iter_mut()) {
        if *t {
            g.clear();
            *t = false;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let trunk_out = model.trunk.out_dim();
    let mut losses = Vec::with_capacity(batch.len());
    for s in batch {
        let trace = model.trunk.forward_trace(&s.trunk_input, Some(&mut *rng))?;
        let mut rep = trace.output.clone();
        rep.extend_from_slice(&s.head_extra);
        let head = &model.heads[s.head];
        let htrace = head.forward_trace::<ChaCha8Rng>(&rep, None)?;
        let (loss, dl) = loss_and_grad(model.spec.loss, htrace.output[0], s.y)?;
        if !loss.is_finite() || !dl.is_finite() {
            return Err(Error::training(
                format!("record {}", s.id),
                format!("non-finite loss {loss} (prediction {})", htrace.output[0]),
            ));
        }
        losses.push(loss);
        let grad_rep = head.backward(&htrace, &[dl * scale], &mut scratch.heads[s.head]);
        scratch.touched[s.head] = true;
        model.trunk.backward(&trace, &grad_rep[..trunk_out], &mut scratch.trunk);
    }
    optim.trunk.step(&mut model.trunk, &scratch.trunk, "trunk")?;
    for (i, head) in model.heads.iter_mut().enumerate() {
        if scratch.touched[i] {
            let path = format!("heads.{}", model.spec.arms[i]);
            optim.heads[i].step(head, &scratch.heads[i], &path)?;
        }
    }
    Ok(losses)
}

/// Runs every batch of `batches` (indices into `samples`) once, in order.
///
/// Each sample's loss flows only through the head of its own arm; the trunk
/// sees every sample. A head whose arm is absent from a batch is not stepped.
pub fn train_epoch(
    model: &mut MultiHeadNet,
    samples: &[PreparedSample],
    batches: &[Vec<usize>],
    optim: &mut ModelOptimizer,
    rng: &mut ChaCha8Rng,
) -> Result<EpochLoss> {
    let mut scratch = Scratch::new(model);
    let heads = model.heads.len();
    let mut sum = vec![0.0; heads];
    let mut count = vec![0usize; heads];
    let mut batch = Vec::new();
    for idx in batches {
        batch.clear();
        for &i in idx {
            let s = samples
                .get(i)
                .ok_or_else(|| Error::Parameter(format!("batch index {i} out of range ({} samples)", samples.len())))?;
            if s.head >= heads {
                return Err(Error::Data(format!("record {} refers to head {} of {heads}", s.id, s.head)));
            }
            batch.push(s);
        }
        if batch.is_empty() {
            continue;
        }
        let losses = train_batch(model, &batch, optim, rng, &mut scratch)?;
        for (s, l) in batch.iter().zip(losses) {
            sum[s.head] += l;
            count[s.head] += 1;
        }
    }
    let total: usize = count.iter().sum();
    let per_arm = model
        .spec
        .arms
        .iter()
        .enumerate()
        .filter(|(i, _)| count[*i] > 0)
        .map(|(i, a)| (*a, sum[i] / count[i] as f64))
        .collect();
    Ok(EpochLoss {
        overall: if total == 0 { 0.0 } else { sum.iter().sum::<f64>() / total as f64 },
        per_arm,
    })
}

/// Mean factual loss with dropout disabled.
pub(crate) fn mean_loss(model: &MultiHeadNet, samples: &[PreparedSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mut rep = model.trunk.forward(&s.trunk_input)?;
        rep.extend_from_slice(&s.head_extra);
        let out = model.heads[s.head].forward(&rep)?[0];
        total += loss_and_grad(model.spec.loss, out, s.y)?.0;
    }
    Ok(total / samples.len() as f64)
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Trains on `train` with early stopping on the loss over `val`, then restores
/// the parameters of the best validation epoch.
pub fn fit(
    mut model: MultiHeadNet,
    train: &[PatientRecord],
    val: &[PatientRecord],
    cfg: &TrainConfig,
) -> Result<(MultiHeadNet, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    if model.spec.loss != cfg.loss || model.spec.features != cfg.features {
        return Err(Error::Config("model was initialised with a different loss or feature set than the train config".into()));
    }
    let train_ids: HashSet<u64> = train.iter().map(|r| r.id).collect();
    if let Some(r) = val.iter().find(|r| train_ids.contains(&r.id)) {
        return Err(Error::Data(format!("record {} appears in both the training and validation sets", r.id)));
    }

    let rows: Vec<&[f64]> = train.iter().map(|r| r.features.as_slice()).collect();
    model.set_normalization(Normalization::fit(model.schema.len(), &rows)?)?;
    model.meta.config_hash = cfg.digest();
    model.meta.untrained_heads = model
        .spec
        .arms
        .iter()
        .copied()
        .filter(|a| !train.iter().any(|r| r.arm == *a))
        .collect();
    for arm in &model.meta.untrained_heads {
        log::warn!("no training records for arm {arm}; its head stays at initialisation");
    }

    let train_s = model.prepare(train)?;
    let val_s = model.prepare(val)?;
    let mut optim = ModelOptimizer::new(&model, cfg.adamw());
    let base = mix_seed(cfg.seed, 0x7A1);
    let mut shuffle = ChaCha8Rng::seed_from_u64(base);
    shuffle.set_stream(SHUFFLE_STREAM);
    let mut dropout = ChaCha8Rng::seed_from_u64(base);
    dropout.set_stream(DROPOUT_STREAM);

    let mut order: Vec<usize> = (0..train_s.len()).collect();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut best = (model.trunk.clone(), model.heads.clone());
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let batches: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
        let loss = train_epoch(&mut model, &train_s, &batches, &mut optim, &mut dropout)?;
        let val_loss = mean_loss(&model, &val_s)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss.overall,
            train_loss_per_arm: loss.per_arm,
            val_loss,
        });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = (model.trunk.clone(), model.heads.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    (model.trunk, model.heads) = best;
    model.meta.epochs_trained = history.epochs.len();
    Ok((model, history))
}
