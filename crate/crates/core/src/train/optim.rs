//! Adam with decoupled weight decay, SGD with momentum, and global-norm
//! gradient clipping.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// SGD only.
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            weight_decay: 1e-5,
            clip_norm: 12.0,
            steps: 500,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, reason: String| Err(Error::Config { key: key.into(), reason });
        // lr = 0 is accepted: it freezes parameters, which tests rely on
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return err("optim.lr", format!("{} must be a finite nonnegative real", self.lr));
        }
        for (key, v) in [("optim.beta1", self.beta1), ("optim.beta2", self.beta2), ("optim.momentum", self.momentum)] {
            if !(0.0..1.0).contains(&v) {
                return err(key, format!("{v} is outside [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return err("optim.eps", format!("{} must be positive", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err("optim.weight_decay", format!("{} must be nonnegative", self.weight_decay));
        }
        if !(self.clip_norm >= 0.0) {
            return err("optim.clip_norm", format!("{} must be nonnegative", self.clip_norm));
        }
        if self.steps == 0 {
            return err("train.steps", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return err("train.batch_size", "must be at least 1".into());
        }
        Ok(())
    }
}

/// Moment buffers, allocated on the first update. `second` stays empty for SGD.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState<T> {
    pub t: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

/// Euclidean norm over every present gradient, accumulated in `f64`.
pub fn global_norm<T: Real>(grads: &[Option<Tensor<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt()
}

impl<T: Real> OptimState<T> {
    /// Applies one update from `grads` (indexed by [`ParamId`]). Returns the
    /// pre-clipping gradient norm. With `lr = 0` parameters are left
    /// untouched bit for bit.
    pub fn apply(&mut self, cfg: &OptimConfig, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<f64> {
        if grads.len() != params.len() {
            return Err(Error::shape("optimizer", format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        if self.first.is_empty() {
            self.first = params.ids().map(|id| Tensor::zeros(params.shape(id).to_vec())).collect();
            if cfg.algorithm == Algorithm::Adam {
                self.second = self.first.clone();
            }
        }
        let norm = global_norm(grads);
        let clip = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let id = ParamId(i);
            let update = cfg.lr != 0.0;
            let m = self.first[i].data_mut();
            match cfg.algorithm {
                Algorithm::Adam => {
                    let v = self.second[i].data_mut();
                    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
                    for ((m, v), &g) in m.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                        let g = g * T::of(clip);
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                    }
                    if update {
                        let (lr, wd, eps) = (T::of(cfg.lr), T::of(cfg.lr * cfg.weight_decay), T::of(cfg.eps));
                        let (c1, c2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
                        let p = params.get_mut(id).data_mut();
                        for ((p, &m), &v) in p.iter_mut().zip(self.first[i].data()).zip(self.second[i].data()) {
                            let step = lr * (m * c1) / ((v * c2).sqrt() + eps);
                            *p = *p - step - wd * *p;
                        }
                    }
                }
                Algorithm::Sgd => {
                    let mu = T::of(cfg.momentum);
                    let wd = T::of(cfg.weight_decay);
                    let p = params.get(id).data();
                    for ((m, &g), &p) in m.iter_mut().zip(g.data()).zip(p) {
                        *m = mu * *m + g * T::of(clip) + wd * p;
                    }
                    if update {
                        let lr = T::of(cfg.lr);
                        let p = params.get_mut(id).data_mut();
                        for (p, &m) in p.iter_mut().zip(self.first[i].data()) {
                            *p -= lr * m;
                        }
                    }
                }
            }
        }
        Ok(norm)
    }
}
