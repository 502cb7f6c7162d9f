//! Dice, cross-entropy and the deep-supervision weighted combination.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub dice_weight: f64,
    pub ce_weight: f64,
    /// Weight decay per auxiliary level; `0` keeps only the primary head.
    pub gamma: f64,
    /// Dice smoothing term.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { dice_weight: 1.0, ce_weight: 1.0, gamma: 0.5, epsilon: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, reason: String| Err(Error::Config { key: key.into(), reason });
        if !(self.dice_weight >= 0.0 && self.dice_weight.is_finite()) {
            return err("loss.dice_weight", format!("{} must be a nonnegative real", self.dice_weight));
        }
        if !(self.ce_weight >= 0.0 && self.ce_weight.is_finite()) {
            return err("loss.ce_weight", format!("{} must be a nonnegative real", self.ce_weight));
        }
        if self.dice_weight + self.ce_weight <= 0.0 {
            return err("loss.dice_weight", "dice and cross-entropy weights are both zero".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return err("loss.gamma", format!("{} is outside [0, 1]", self.gamma));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return err("loss.epsilon", format!("{} must be a nonnegative real", self.epsilon));
        }
        Ok(())
    }
}

/// `[B, H, W]` tensor of 0/1 targets.
pub fn mask_batch<T: Real>(masks: &[Mask]) -> Result<Tensor<T>> {
    let first = masks.first().ok_or_else(|| Error::NoSamples("empty mask batch".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if m.dims() != (h, w) {
            return Err(Error::shape("mask_batch", format!("{:?} vs {:?}", m.dims(), (h, w))));
        }
        data.extend(m.data().iter().map(|&v| T::of(v as f64)));
    }
    Tensor::new([masks.len(), h, w], data)
}

fn check_target<T: Real>(op: &'static str, logits: &[usize], target: &Tensor<T>) -> Result<()> {
    match logits {
        [b, c, h, w] if *c >= 2 && target.shape() == [*b, *h, *w] => {}
        _ => {
            return Err(Error::shape(op, format!("logits {logits:?} vs target {:?}", target.shape())));
        }
    }
    if target.data().iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::InvalidArgument(format!("{op} target must be binary")));
    }
    Ok(())
}

/// Foreground probability `Σ_{c≥1} softmax(logits)_c` as `[B, 1, H, W]`.
fn foreground<'t, T: Real>(logits: Var<'t, T>) -> Result<Var<'t, T>> {
    let c = logits.shape()[1];
    logits.softmax(1)?.narrow(1, 1, c - 1)?.sum_axis(1)
}

/// `1 - (2 Σ p·m + ε) / (Σ p + Σ m + ε)` over the whole batch.
pub fn dice_loss<'t, T: Real>(logits: Var<'t, T>, target: &Tensor<T>, epsilon: f64) -> Result<Var<'t, T>> {
    let shape = logits.shape();
    check_target("dice_loss", &shape, target)?;
    let tape = logits.tape();
    let m = tape.constant(target.clone().reshaped([shape[0], 1, shape[2], shape[3]])?);
    let m_sum = target.data().iter().map(|v| v.f64()).sum::<f64>();
    let p = foreground(logits)?;
    let num = p.mul(m)?.sum()?.scale(2.0)?.add_scalar(epsilon)?;
    let den = p.sum()?.add_scalar(m_sum + epsilon)?;
    num.div(den)?.neg()?.add_scalar(1.0)
}

/// Mean over pixels of `-log softmax(logits)[true class]`.
pub fn cross_entropy_loss<'t, T: Real>(logits: Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
    let shape = logits.shape();
    check_target("cross_entropy_loss", &shape, target)?;
    let (b, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut onehot = vec![T::zero(); b * c * plane];
    for n in 0..b {
        for (i, &v) in target.data()[n * plane..][..plane].iter().enumerate() {
            let class = if v == T::one() { 1 } else { 0 };
            onehot[(n * c + class) * plane + i] = T::one();
        }
    }
    let onehot = logits.tape().constant(Tensor::new(shape.clone(), onehot)?);
    logits.log_softmax(1)?.mul(onehot)?.sum()?.scale(-1.0 / (b * plane) as f64)
}

fn level_loss<'t, T: Real>(logits: Var<'t, T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<Var<'t, T>> {
    match (cfg.dice_weight > 0.0, cfg.ce_weight > 0.0) {
        (true, true) => dice_loss(logits, target, cfg.epsilon)?
            .scale(cfg.dice_weight)?
            .add(cross_entropy_loss(logits, target)?.scale(cfg.ce_weight)?),
        (true, false) => dice_loss(logits, target, cfg.epsilon)?.scale(cfg.dice_weight),
        _ => cross_entropy_loss(logits, target)?.scale(cfg.ce_weight),
    }
}

/// Per-level weight `γ^level / Σ γ^level`, level 0 being the primary head.
pub fn level_weights(levels: usize, gamma: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..levels).map(|l| gamma.powi(l as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Weighted Dice + cross-entropy over the primary and auxiliary heads.
/// Auxiliary targets are nearest-neighbour downscales of `masks`; `aux` is
/// ordered from the finest to the coarsest level.
pub fn combined_loss<'t, T: Real>(
    primary: Var<'t, T>,
    aux: &[Var<'t, T>],
    masks: &[Mask],
    cfg: &LossConfig,
) -> Result<Var<'t, T>> {
    let weights = level_weights(1 + aux.len(), cfg.gamma);
    let mut total = level_loss(primary, &mask_batch(masks)?, cfg)?;
    if weights[0] != 1.0 {
        total = total.scale(weights[0])?;
    }
    let (h, w) = masks[0].dims();
    for (head, &weight) in aux.iter().zip(&weights[1..]) {
        let s = head.shape();
        if s.len() != 4 || s[2] == 0 || s[3] == 0 || h % s[2] != 0 || w % s[3] != 0 || h / s[2] != w / s[3] {
            return Err(Error::shape("combined_loss", format!("auxiliary logits {s:?} vs mask {h}x{w}")));
        }
        if weight == 0.0 {
            continue;
        }
        let small: Vec<Mask> = masks.iter().map(|m| m.resize_nearest(s[2], s[3])).collect();
        total = total.add(level_loss(*head, &mask_batch(&small)?, cfg)?.scale(weight)?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn uniform_logits_give_ln2() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros([1, 2, 3, 3]), true);
        let t = Tensor::zeros([1, 3, 3]);
        let l = cross_entropy_loss(x, &t).unwrap().value().item();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn half_overlap_dice() {
        // three pixels: prediction on {1, 2}, truth on {2, 3}
        let tape = Tape::<f64>::new();
        let big = 60.0;
        let logits = Tensor::new([1, 2, 1, 3], vec![0.0, 0.0, big, big, big, 0.0]).unwrap();
        let x = tape.leaf(logits, true);
        let t = Tensor::new([1, 1, 3], vec![0.0, 1.0, 1.0]).unwrap();
        let l = dice_loss(x, &t, 0.0).unwrap().value().item();
        assert!((l - 0.5).abs() < 1e-12, "{l}");
    }

    #[test]
    fn weights_normalize() {
        let w = level_weights(3, 0.5);
        assert_eq!(w, vec![1.0 / 1.75, 0.5 / 1.75, 0.25 / 1.75]);
        assert_eq!(level_weights(3, 0.0), vec![1.0, 0.0, 0.0]);
    }
}
