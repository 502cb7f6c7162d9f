use super::Var;
use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

impl<'t, T: Real> Var<'t, T> {
    /// Normalizes every slice spanned by the trailing `normalized` extents to
    /// zero mean and unit (biased) variance. No affine transform is applied.
    pub fn layer_norm(self, normalized: &[usize], eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape();
        if normalized.is_empty() || numel(normalized) == 0 {
            return Err(Error::InvalidArgument("layer_norm over an empty slice".into()));
        }
        if normalized.len() > shape.len() || &shape[shape.len() - normalized.len()..] != normalized {
            return Err(Error::shape("layer_norm", format!("{normalized:?} is not a suffix of {shape:?}")));
        }
        let n = numel(normalized);
        let rows = x.len() / n;
        let nf = T::of(n as f64);
        let eps = T::of(eps);
        let mut y = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let xs = &x.data()[r * n..(r + 1) * n];
            let mean = xs.iter().copied().sum::<T>() / nf;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, &v) in y[r * n..(r + 1) * n].iter_mut().zip(xs) {
                *o = (v - mean) * is;
            }
        }
        let out = Tensor::new(shape.to_vec(), y)?;
        let xhat = out.clone();
        self.tape.push("layer_norm", out, &[self], move || {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); g.len()];
                for r in 0..rows {
                    let gs = &g.data()[r * n..(r + 1) * n];
                    let xh = &xhat.data()[r * n..(r + 1) * n];
                    let mg = gs.iter().copied().sum::<T>() / nf;
                    let mgx = gs.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / nf;
                    for i in 0..n {
                        dx[r * n + i] = inv_std[r] * (gs[i] - mg - xh[i] * mgx);
                    }
                }
                vec![Some(Tensor::new(xhat.shape().to_vec(), dx).unwrap())]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn constant_input_maps_to_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full([2, 5], 3.5));
        let y = x.layer_norm(&[5], 1e-5).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_slice() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2], &[1.0, 3.0]).unwrap());
        let y = x.layer_norm(&[2], 1e-5).unwrap().value();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-12);
        assert!((y.data()[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn suffix_required() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones([2, 3]));
        assert!(x.layer_norm(&[2], 1e-5).is_err());
        assert!(x.layer_norm(&[], 1e-5).is_err());
    }
}
