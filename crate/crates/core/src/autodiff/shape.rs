use super::Var;
use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Real, Tensor};

pub(crate) fn permute_data<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let s = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    super::broadcast::for_each_offset(&out_shape, [&src_strides], |_, [o]| out.push(x.data()[o]));
    Tensor::new(out_shape, out).unwrap()
}

impl<'t, T: Real> Var<'t, T> {
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let shape = shape.into();
        let x = self.value();
        let old = x.shape().to_vec();
        let out = (*x).clone().reshaped(shape)?;
        self.tape.push("reshape", out, &[self], move || {
            Box::new(move |g: &Tensor<T>| vec![Some(g.clone().reshaped(old.clone()).unwrap())])
        })
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", format!("{axes:?} is not a permutation of rank {rank}")));
        }
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out = permute_data(&x, axes);
        self.tape.push("permute", out, &[self], move || {
            Box::new(move |g: &Tensor<T>| vec![Some(permute_data(g, &inverse))])
        })
    }

    /// The slice `start..start + len` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("narrow", format!("{start}+{len} on axis {axis} of {shape:?}")));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let n = shape[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x.data()[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        self.tape.push("narrow", Tensor::new(oshape, out)?, &[self], move || {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); numel(&shape)];
                for o in 0..outer {
                    dx[(o * n + start) * inner..(o * n + start + len) * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::new(shape.clone(), dx).unwrap())]
            })
        })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        for v in &values {
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?}")));
            }
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &n) in values.iter().zip(&sizes) {
                out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut oshape = base.clone();
        oshape[axis] = total;
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        first.tape.push("concat", Tensor::new(oshape, out)?, parts, move || {
            Box::new(move |g: &Tensor<T>| {
                let mut grads: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(numel(s))).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gv, &n) in grads.iter_mut().zip(&sizes) {
                        gv.extend_from_slice(&g.data()[off..off + n * inner]);
                        off += n * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(&shapes)
                    .map(|(d, s)| Some(Tensor::new(s.clone(), d).unwrap()))
                    .collect()
            })
        })
    }

    /// Gathers entries along `axis`: output position `i` takes input index
    /// `indices[i]`. Repeated indices accumulate in the backward pass.
    pub fn index_select(self, axis: usize, indices: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || indices.is_empty() || indices.iter().any(|&i| i >= shape[axis]) {
            return Err(Error::shape("index_select", format!("indices out of range for axis {axis} of {shape:?}")));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let n = shape[axis];
        let m = indices.len();
        let mut out = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for &i in indices {
                out.extend_from_slice(&x.data()[(o * n + i) * inner..(o * n + i + 1) * inner]);
            }
        }
        let mut oshape = shape.clone();
        oshape[axis] = m;
        let indices = indices.to_vec();
        self.tape.push("index_select", Tensor::new(oshape, out)?, &[self], move || {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); numel(&shape)];
                for o in 0..outer {
                    for (j, &i) in indices.iter().enumerate() {
                        let src = &g.data()[(o * m + j) * inner..][..inner];
                        for (d, &s) in dx[(o * n + i) * inner..][..inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                vec![Some(Tensor::new(shape.clone(), dx).unwrap())]
            })
        })
    }

    /// Zero-pads the last two axes by (top, bottom, left, right).
    pub fn pad2d(self, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(Error::shape("pad2d", format!("need rank >= 2, got {shape:?}")));
        }
        if top + bottom + left + right == 0 {
            return Ok(self);
        }
        let (h, w) = (shape[r - 2], shape[r - 1]);
        let (h2, w2) = (h + top + bottom, w + left + right);
        let outer = numel(&shape[..r - 2]);
        let mut out = vec![T::zero(); outer * h2 * w2];
        for o in 0..outer {
            for i in 0..h {
                out[(o * h2 + i + top) * w2 + left..][..w].copy_from_slice(&x.data()[(o * h + i) * w..][..w]);
            }
        }
        let mut oshape = shape.clone();
        oshape[r - 2] = h2;
        oshape[r - 1] = w2;
        self.tape.push("pad2d", Tensor::new(oshape, out)?, &[self], move || {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); outer * h * w];
                for o in 0..outer {
                    for i in 0..h {
                        dx[(o * h + i) * w..][..w].copy_from_slice(&g.data()[(o * h2 + i + top) * w2 + left..][..w]);
                    }
                }
                vec![Some(Tensor::new(shape.clone(), dx).unwrap())]
            })
        })
    }
}
