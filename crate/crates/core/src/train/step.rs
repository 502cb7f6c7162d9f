//! Training state and the single optimization step.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{combined_loss, LossConfig};
use super::optim::{OptimConfig, OptimState};
use crate::autodiff::Tape;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::models::Model;
use crate::params::{Ctx, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossStats {
    pub count: u64,
    pub sum: f64,
    pub last: f64,
    /// Accumulators for the epoch in progress.
    pub epoch_count: u64,
    pub epoch_sum: f64,
}

impl LossStats {
    pub fn record(&mut self, loss: f64) {
        self.count += 1;
        self.sum += loss;
        self.last = loss;
        self.epoch_count += 1;
        self.epoch_sum += loss;
    }

    /// Mean loss of the epoch in progress; resets the epoch accumulators.
    pub fn close_epoch(&mut self) -> f64 {
        let mean = if self.epoch_count == 0 { f64::NAN } else { self.epoch_sum / self.epoch_count as f64 };
        self.epoch_count = 0;
        self.epoch_sum = 0.0;
        mean
    }
}

/// Everything besides the parameters needed to resume training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub optim: OptimState<T>,
    pub stats: LossStats,
    /// Drives per-epoch shuffling and augmentation.
    pub rng: ChaCha8Rng,
    /// Sample order of the current epoch and the position within it.
    pub order: Vec<u32>,
    pub cursor: usize,
    pub best_f1: Option<f64>,
}

impl<T: Real> TrainState<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            step: 0,
            epoch: 0,
            optim: OptimState::default(),
            stats: LossStats::default(),
            // separate stream from parameter initialisation, which uses the same seed
            rng: {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(1);
                r
            },
            order: Vec::new(),
            cursor: 0,
            best_f1: None,
        }
    }

    /// Indices of the next batch over `n` samples. A fresh permutation is
    /// drawn at the start of every epoch; the last batch may be short.
    pub fn next_batch(&mut self, n: usize, batch_size: usize) -> Vec<usize> {
        if self.order.len() != n || self.cursor >= n {
            self.order = (0..n as u32).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + batch_size).min(n);
        let idx = self.order[self.cursor..end].iter().map(|&i| i as usize).collect();
        self.cursor = end;
        idx
    }

    pub fn epoch_finished(&self) -> bool {
        !self.order.is_empty() && self.cursor >= self.order.len()
    }
}

/// A stacked mini-batch: `images` is `[B, 1, S, S]`.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub masks: Vec<Mask>,
}

impl<T: Real> Batch<T> {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Self> {
        let mut shape: Option<Vec<usize>> = None;
        let mut data = Vec::new();
        let mut masks = Vec::new();
        for s in samples {
            match &shape {
                Some(sh) if sh.as_slice() != s.image.shape() => {
                    return Err(Error::shape("batch", format!("{:?} vs {:?}", s.image.shape(), sh)));
                }
                Some(_) => {}
                None => shape = Some(s.image.shape().to_vec()),
            }
            data.extend(s.image.data().iter().map(|&v| T::of(v as f64)));
            masks.push(s.mask.clone());
        }
        let shape = shape.ok_or_else(|| Error::NoSamples("empty batch".into()))?;
        let mut full = vec![masks.len()];
        full.extend(shape);
        Ok(Self { images: Tensor::new(full, data)?, masks })
    }
}

/// Name of the first parameter whose gradient holds a non-finite value.
pub fn first_non_finite<T: Real>(params: &ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Option<String> {
    params
        .ids()
        .zip(grads)
        .find(|(_, g)| g.as_ref().is_some_and(|g| !g.all_finite()))
        .map(|(id, _)| params.name(id).to_string())
}

/// One forward/backward/update. Returns the loss before the update.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    state: &mut TrainState<T>,
    batch: &Batch<T>,
    optim: &OptimConfig,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    let step = state.step;
    let non_finite = |op: &str| Error::NonFiniteLoss { step, param: format!("(forward op `{op}`)") };
    let (loss, grads) = {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &model.params, true);
        let forward = || -> Result<_> {
            let out = model.net.forward(&ctx, tape.constant(batch.images.clone()))?;
            combined_loss(out.logits, &out.aux, &batch.masks, loss_cfg)
        };
        let loss = match forward() {
            Ok(l) => l,
            Err(Error::NonFinite { op }) => return Err(non_finite(op)),
            Err(e) => return Err(e),
        };
        let value = loss.value().item().f64();
        (value, ctx.param_grads(tape.backward(loss)?))
    };
    if let Some(param) = first_non_finite(&model.params, &grads) {
        return Err(Error::NonFiniteLoss { step, param });
    }
    if !loss.is_finite() {
        return Err(non_finite("loss"));
    }
    state.optim.apply(optim, &mut model.params, &grads)?;
    state.step += 1;
    state.stats.record(loss);
    Ok(loss)
}
