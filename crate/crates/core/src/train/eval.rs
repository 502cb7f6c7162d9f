//! Inference over prepared samples.

use crate::autodiff::Tape;
use crate::data::Sample;
use crate::error::Result;
use crate::mask::Mask;
use crate::metrics::{confusion, thresholded_mask, ImageMetrics};
use crate::models::Model;
use crate::params::Ctx;
use crate::tensor::{Real, Tensor};

use super::step::Batch;

/// Primary-head logits `[B, C, H, W]` for `images` `[B, 1, H, W]`.
pub fn predict_logits<T: Real>(model: &Model<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &model.params, false);
    let out = model.net.forward(&ctx, tape.constant(images.clone()))?;
    let logits = out.logits.value();
    Ok((*logits).clone())
}

/// Splits `[B, C, H, W]` into `B` tensors of `[C, H, W]`.
pub fn split_batch<T: Real>(t: &Tensor<T>) -> Vec<Tensor<T>> {
    let s = t.shape();
    let per = s[1..].iter().product::<usize>();
    t.data()
        .chunks_exact(per)
        .map(|c| Tensor::new(s[1..].to_vec(), c.to_vec()).expect("chunk matches shape"))
        .collect()
}

/// Thresholded predictions for `samples`, evaluated `batch_size` at a time.
pub fn predict_masks<T: Real>(model: &Model<T>, samples: &[&Sample], tau: f64, batch_size: usize) -> Result<Vec<Mask>> {
    let mut masks = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = Batch::<T>::from_samples(chunk.iter().copied())?;
        for logits in split_batch(&predict_logits(model, &batch.images)?) {
            masks.push(thresholded_mask(&logits, tau)?);
        }
    }
    Ok(masks)
}

/// Per-image confusion counts against the ground-truth masks.
pub fn evaluate<T: Real>(model: &Model<T>, samples: &[&Sample], tau: f64, batch_size: usize) -> Result<Vec<ImageMetrics>> {
    predict_masks(model, samples, tau, batch_size)?
        .iter()
        .zip(samples)
        .map(|(pred, s)| Ok(ImageMetrics::new(s.id.clone(), confusion(pred, &s.mask)?)))
        .collect()
}
