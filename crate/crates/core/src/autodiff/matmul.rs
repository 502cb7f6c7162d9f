use super::broadcast::{broadcast_shape, expanded_strides, for_each_offset};
use super::{dot, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

// c[m x n] += a[m x k] * b[k x n]
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

// c[m x n] += a[m x k] * b^T, b stored [n x k]
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

// c[m x n] += a^T * b, a stored [k x m], b [k x n]
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += api * bj;
            }
        }
    }
}

/// `dst[c×r] = src[r×c]ᵀ`.
fn transpose<T: Real>(r: usize, c: usize, src: &[T], dst: &mut [T]) {
    for i in 0..r {
        for (j, &v) in src[i * c..(i + 1) * c].iter().enumerate() {
            dst[j * r + i] = v;
        }
    }
}

struct Plan {
    m: usize,
    k: usize,
    n: usize,
    batch: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

fn plan(a: &[usize], b: &[usize]) -> Result<Plan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape("matmul", format!("operands need rank >= 2: {a:?}, {b:?}")));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(Error::shape("matmul", format!("inner extents differ: {a:?} x {b:?}")));
    }
    let (ba, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let batch = broadcast_shape(ba, bb).map_err(|_| Error::shape("matmul", format!("batch {ba:?} vs {bb:?}")))?;
    // strides in units of whole matrices
    let sa = expanded_strides(if ba.is_empty() { &[1] } else { ba }, if batch.is_empty() { &[1] } else { &batch });
    let sb = expanded_strides(if bb.is_empty() { &[1] } else { bb }, if batch.is_empty() { &[1] } else { &batch });
    Ok(Plan { m, k, n, batch, sa, sb })
}

impl<'t, T: Real> Var<'t, T> {
    /// Batched matrix product with broadcasting over leading extents.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let p = plan(a.shape(), b.shape())?;
        let (m, k, n) = (p.m, p.k, p.n);
        let batch_dims: Vec<usize> = if p.batch.is_empty() { vec![1] } else { p.batch.clone() };
        let nb = numel(&batch_dims);
        let mut out = vec![T::zero(); nb * m * n];
        for_each_offset(&batch_dims, [&p.sa, &p.sb], |bi, [oa, ob]| {
            gemm_nn(
                m,
                k,
                n,
                &a.data()[oa * m * k..(oa + 1) * m * k],
                &b.data()[ob * k * n..(ob + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        });
        let mut shape = p.batch.clone();
        shape.extend([m, n]);
        let out = Tensor::new(shape, out)?;
        self.tape.push("matmul", out, &[self, other], move || {
            Box::new(move |g: &Tensor<T>| {
                let mut ga = vec![T::zero(); a.len()];
                let mut gb = vec![T::zero(); b.len()];
                // Transposed operands keep every inner loop contiguous:
                // ga = g · bᵀ as g[m×n] · bt[n×k]; gb = aᵀ · g as dot products
                // of rows of at[k×m] and gt[n×m].
                let (mut at, mut bt, mut gt) = (vec![T::zero(); m * k], vec![T::zero(); k * n], vec![T::zero(); m * n]);
                for_each_offset(&batch_dims, [&p.sa, &p.sb], |bi, [oa, ob]| {
                    let gc = &g.data()[bi * m * n..(bi + 1) * m * n];
                    let am = &a.data()[oa * m * k..(oa + 1) * m * k];
                    let bm = &b.data()[ob * k * n..(ob + 1) * k * n];
                    transpose(k, n, bm, &mut bt);
                    gemm_nn(m, n, k, gc, &bt, &mut ga[oa * m * k..(oa + 1) * m * k]);
                    transpose(m, k, am, &mut at);
                    transpose(m, n, gc, &mut gt);
                    gemm_nt(k, m, n, &at, &gt, &mut gb[ob * k * n..(ob + 1) * k * n]);
                });
                vec![
                    Some(Tensor::new(a.shape().to_vec(), ga).unwrap()),
                    Some(Tensor::new(b.shape().to_vec(), gb).unwrap()),
                ]
            })
        })
    }

    /// `x · w (+ bias)` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(self, w: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let ws = w.shape();
        if ws.len() != 2 || shape[shape.len() - 1] != ws[0] {
            return Err(Error::shape("linear", format!("input {shape:?} with weight {ws:?}")));
        }
        let rows = numel(&shape[..shape.len() - 1]);
        let y = self.reshape(vec![rows, ws[0]])?.matmul(w)?;
        let y = match bias {
            Some(b) => y.add(b)?,
            None => y,
        };
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.push(ws[1]);
        y.reshape(out_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn small_product() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_f64([2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::from_f64([2, 1], &[1.0, 1.0]).unwrap());
        let c = a.matmul(b).unwrap();
        assert_eq!(c.shape(), vec![2, 1]);
        assert_eq!(c.value().data(), &[3.0, 7.0]);
    }

    #[test]
    fn inner_mismatch() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones([2, 3]));
        let b = tape.constant(Tensor::ones([2, 3]));
        assert!(matches!(a.matmul(b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn batched_broadcast() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones([4, 2, 3]));
        let b = tape.constant(Tensor::ones([3, 5]));
        let c = a.matmul(b).unwrap();
        assert_eq!(c.shape(), vec![4, 2, 5]);
        assert!(c.value().data().iter().all(|&x| x == 3.0));
    }
}
