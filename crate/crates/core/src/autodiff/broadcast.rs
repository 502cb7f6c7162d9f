use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Real, Tensor};

/// Trailing-dimension broadcast of two shapes; the shorter shape is
/// left-padded with ones.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape("broadcast", format!("{a:?} vs {b:?}"))),
        };
    }
    Ok(out)
}

/// Strides that read `shape` as if it were expanded to `out` (zero stride on
/// broadcast axes).
pub(crate) fn expanded_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| if i < off || shape[i - off] == 1 { 0 } else { s[i - off] })
        .collect()
}

/// Visits every element of `out` in row-major order, passing the linear
/// output index and the matching offsets into each strided operand.
pub(crate) fn for_each_offset<const K: usize>(
    out: &[usize],
    operand_strides: [&[usize]; K],
    mut f: impl FnMut(usize, [usize; K]),
) {
    let n = numel(out);
    if out.is_empty() || n == 0 {
        return;
    }
    let rank = out.len();
    let inner = out[rank - 1];
    let inner_stride: [usize; K] = std::array::from_fn(|k| operand_strides[k][rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let mut base = [0usize; K];
    let mut lin = 0;
    while lin < n {
        let mut offs = base;
        for _ in 0..inner {
            f(lin, offs);
            lin += 1;
            for k in 0..K {
                offs[k] += inner_stride[k];
            }
        }
        // advance the outer multi-index
        let mut d = rank - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            for k in 0..K {
                base[k] += operand_strides[k][d];
            }
            if idx[d] < out[d] {
                break;
            }
            for k in 0..K {
                base[k] -= operand_strides[k][d] * out[d];
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary_map<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    if a.shape() == out && b.shape() == out {
        return a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    }
    let sa = expanded_strides(a.shape(), out);
    let sb = expanded_strides(b.shape(), out);
    let (da, db) = (a.data(), b.data());
    let mut v = Vec::with_capacity(numel(out));
    for_each_offset(out, [&sa, &sb], |_, [oa, ob]| v.push(f(da[oa], db[ob])));
    v
}

/// Sums `grad` (shaped like the broadcast output) back down to `shape`.
pub(crate) fn reduce_to<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let s = expanded_strides(shape, grad.shape());
    let mut acc = vec![T::zero(); numel(shape)];
    let g = grad.data();
    for_each_offset(grad.shape(), [&s], |lin, [o]| acc[o] += g[lin]);
    Tensor::new(shape.to_vec(), acc).expect("reduced shape is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape(&[4, 1, 5], &[3, 1]).unwrap(), vec![4, 3, 5]);
        assert!(broadcast_shape(&[2, 3], &[2]).is_err());
    }

    #[test]
    fn reduce_sums_broadcast_axes() {
        let g = Tensor::<f64>::ones([2, 3, 4]);
        let r = reduce_to(&g, &[3, 1]);
        assert_eq!(r.shape(), &[3, 1]);
        assert!(r.data().iter().all(|&x| x == 8.0));
    }
}
