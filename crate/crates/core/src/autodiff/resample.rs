use super::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Channel-preserving 2x spatial resampling of `[B, C, H, W]` maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    /// Keep pixel `(2i, 2j)`; this is also nearest-neighbour downscaling.
    DownsampleStride2,
    UpsampleNearest2,
    /// Learned 2x2 stride-2 transposed convolution (needs a `[C, C, 2, 2]` weight).
    TransposedConv2,
}

fn dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(Error::shape(op, format!("expected [B, C, H, W], got {shape:?}")));
    }
    Ok((shape[0] * shape[1], shape[2], shape[3]))
}

impl<'t, T: Real> Var<'t, T> {
    pub fn resample(self, mode: Resample, weight: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        match mode {
            Resample::DownsampleStride2 => self.downsample2(),
            Resample::UpsampleNearest2 => self.upsample_nearest2(),
            Resample::TransposedConv2 => {
                let w = weight.ok_or_else(|| Error::InvalidArgument("transposed-conv resampling needs a weight".into()))?;
                let (c, ws) = (self.shape()[1], w.shape());
                if ws[0] != c || ws[1] != c {
                    return Err(Error::shape("resample", format!("transposed-conv weight {ws:?} must keep {c} channels")));
                }
                self.conv_transpose2x2(w)
            }
        }
    }

    pub fn downsample2(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (planes, h, w) = dims(&shape, "downsample")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("downsample", format!("odd spatial extent {h}x{w}")));
        }
        let (h2, w2) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(planes * h2 * w2);
        for p in 0..planes {
            for i in 0..h2 {
                for j in 0..w2 {
                    out.push(x.data()[(p * h + 2 * i) * w + 2 * j]);
                }
            }
        }
        let out = Tensor::new(vec![shape[0], shape[1], h2, w2], out)?;
        self.tape.push("downsample2", out, &[self], move || {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            dx[(p * h + 2 * i) * w + 2 * j] = g.data()[(p * h2 + i) * w2 + j];
                        }
                    }
                }
                vec![Some(Tensor::new(shape.clone(), dx).unwrap())]
            })
        })
    }

    pub fn upsample_nearest2(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (planes, h, w) = dims(&shape, "upsample")?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); planes * h2 * w2];
        for p in 0..planes {
            for i in 0..h2 {
                for j in 0..w2 {
                    out[(p * h2 + i) * w2 + j] = x.data()[(p * h + i / 2) * w + j / 2];
                }
            }
        }
        let out = Tensor::new(vec![shape[0], shape[1], h2, w2], out)?;
        self.tape.push("upsample_nearest2", out, &[self], move || {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            dx[(p * h + i / 2) * w + j / 2] += g.data()[(p * h2 + i) * w2 + j];
                        }
                    }
                }
                vec![Some(Tensor::new(shape.clone(), dx).unwrap())]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn nearest_of_single_pixel() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones([1, 1, 1, 1]));
        let y = x.resample(Resample::UpsampleNearest2, None).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 2, 2]);
        assert_eq!(y.value().data(), &[1.0; 4]);
    }

    #[test]
    fn down_up_constant_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full([2, 3, 4, 6], 0.25));
        let y = x.downsample2().unwrap().upsample_nearest2().unwrap();
        assert_eq!(*y.value(), *x.value());
    }

    #[test]
    fn odd_extent_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones([1, 1, 3, 4]));
        assert!(x.resample(Resample::DownsampleStride2, None).is_err());
        assert!(x.resample(Resample::TransposedConv2, None).is_err());
    }
}
