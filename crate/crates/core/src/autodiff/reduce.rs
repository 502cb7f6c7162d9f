use super::Var;
use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

/// (outer, axis extent, inner) decomposition around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

impl<'t, T: Real> Var<'t, T> {
    /// Sum of all elements as a one-element tensor.
    pub fn sum(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let s: T = x.data().iter().copied().sum();
        let shape = x.shape().to_vec();
        self.tape.push("sum", Tensor::scalar(s), &[self], move || {
            Box::new(move |g: &Tensor<T>| vec![Some(Tensor::full(shape.clone(), g.item()))])
        })
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.value().len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split(&shape, axis);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x.data()[(o * n + k) * inner..][..inner];
                for (d, &s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut oshape = shape.clone();
        oshape[axis] = 1;
        self.tape.push("sum_axis", Tensor::new(oshape, out)?, &[self], move || {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); numel(&shape)];
                for o in 0..outer {
                    for k in 0..n {
                        dx[(o * n + k) * inner..][..inner].copy_from_slice(&g.data()[o * inner..][..inner]);
                    }
                }
                vec![Some(Tensor::new(shape.clone(), dx).unwrap())]
            })
        })
    }

    /// Softmax along `axis` (max-subtracted).
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split(&shape, axis);
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| x.data()[at(k)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for k in 0..n {
                    let e = (x.data()[at(k)] - m).exp();
                    y[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    y[at(k)] /= z;
                }
            }
        }
        let out = Tensor::new(shape.clone(), y)?;
        let yv = out.clone();
        self.tape.push("softmax", out, &[self], move || {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: T = (0..n).map(|k| g.data()[at(k)] * yv.data()[at(k)]).sum();
                        for k in 0..n {
                            dx[at(k)] = yv.data()[at(k)] * (g.data()[at(k)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(shape.clone(), dx).unwrap())]
            })
        })
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("log_softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split(&shape, axis);
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| x.data()[at(k)]).fold(T::neg_infinity(), T::max);
                let lse = m + (0..n).map(|k| (x.data()[at(k)] - m).exp()).sum::<T>().ln();
                for k in 0..n {
                    y[at(k)] = x.data()[at(k)] - lse;
                }
            }
        }
        let out = Tensor::new(shape.clone(), y)?;
        let yv = out.clone();
        self.tape.push("log_softmax", out, &[self], move || {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let gs: T = (0..n).map(|k| g.data()[at(k)]).sum();
                        for k in 0..n {
                            dx[at(k)] = g.data()[at(k)] - yv.data()[at(k)].exp() * gs;
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
    fn softmax_rows_sum_to_one() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 50.0]).unwrap());
        let y = x.softmax(1).unwrap().value();
        for r in 0..2 {
            let s: f64 = (0..3).map(|c| y.get(&[r, c])).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let l = x.log_softmax(1).unwrap().value();
        for (a, b) in l.data().iter().zip(y.data()) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_axis_keeps_dim() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s = x.sum_axis(0).unwrap();
        assert_eq!(s.shape(), vec![1, 3]);
        assert_eq!(s.value().data(), &[5.0, 7.0, 9.0]);
    }
}
