//! SS2D: four directional selective scans over a 2-D token grid.
//!
//! A `[B, C, H, W]` map is read as an `H×W` grid of `C`-channel tokens and
//! unfolded into four `[B, H·W, C]` sequences (cross scan). Each sequence
//! goes through its own selective SSM, and the outputs are folded back to
//! grid layout and summed (cross merge). Because merging sums rather than
//! averages, `cross_merge(cross_scan(g)) == 4·g`.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Builder, Ctx, ParamStore};
use crate::ssm::{SelectiveSsm, SsmParams};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanDirection {
    RowMajor,
    ColMajor,
    RowMajorReversed,
    ColMajorReversed,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] =
        [ScanDirection::RowMajor, ScanDirection::ColMajor, ScanDirection::RowMajorReversed, ScanDirection::ColMajorReversed];

    /// Sequence position -> row-major grid index.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let col_major = || (0..h * w).map(move |p| (p % h) * w + p / h);
        match self {
            ScanDirection::RowMajor => (0..h * w).collect(),
            ScanDirection::ColMajor => col_major().collect(),
            ScanDirection::RowMajorReversed => (0..h * w).rev().collect(),
            ScanDirection::ColMajorReversed => {
                let mut v: Vec<usize> = col_major().collect();
                v.reverse();
                v
            }
        }
    }

    /// Row-major grid index -> sequence position.
    pub fn inverse_order(self, h: usize, w: usize) -> Vec<usize> {
        let order = self.order(h, w);
        let mut inv = vec![0; order.len()];
        for (p, &g) in order.iter().enumerate() {
            inv[g] = p;
        }
        inv
    }

    /// The direction visiting the grid in the opposite order.
    pub fn reversed(self) -> Self {
        match self {
            ScanDirection::RowMajor => ScanDirection::RowMajorReversed,
            ScanDirection::ColMajor => ScanDirection::ColMajorReversed,
            ScanDirection::RowMajorReversed => ScanDirection::RowMajor,
            ScanDirection::ColMajorReversed => ScanDirection::ColMajor,
        }
    }
}

fn grid_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match shape {
        [b, c, h, w] => Ok((*b, *c, *h, *w)),
        s => Err(Error::shape("cross_scan", format!("expected [B, C, H, W], got {s:?}"))),
    }
}

/// Unfolds `[B, C, H, W]` into four `[B, H·W, C]` sequences, ordered as
/// [`ScanDirection::ALL`].
pub fn cross_scan<'t, T: Real>(x: Var<'t, T>) -> Result<[Var<'t, T>; 4]> {
    let (b, c, h, w) = grid_dims(&x.shape())?;
    let tokens = x.permute(&[0, 2, 3, 1])?.reshape(vec![b, h * w, c])?;
    let seq = |d: ScanDirection| -> Result<Var<'t, T>> {
        match d {
            ScanDirection::RowMajor => Ok(tokens),
            _ => tokens.index_select(1, &d.order(h, w)),
        }
    };
    Ok([seq(ScanDirection::ALL[0])?, seq(ScanDirection::ALL[1])?, seq(ScanDirection::ALL[2])?, seq(ScanDirection::ALL[3])?])
}

/// Inverse-permutes each sequence to grid layout and sums the four grids.
pub fn cross_merge<'t, T: Real>(seqs: [Var<'t, T>; 4], h: usize, w: usize) -> Result<Var<'t, T>> {
    let shape = seqs[0].shape();
    if shape.len() != 3 || shape[1] != h * w || seqs.iter().any(|s| s.shape() != shape) {
        return Err(Error::shape(
            "cross_merge",
            format!("sequences {:?} for a {h}x{w} grid", seqs.iter().map(|s| s.shape()).collect::<Vec<_>>()),
        ));
    }
    let (b, c) = (shape[0], shape[2]);
    let mut acc: Option<Var<'t, T>> = None;
    for (d, s) in ScanDirection::ALL.into_iter().zip(seqs) {
        let g = match d {
            ScanDirection::RowMajor => s,
            _ => s.index_select(1, &d.inverse_order(h, w))?,
        };
        acc = Some(match acc {
            None => g,
            Some(a) => a.add(g)?,
        });
    }
    acc.expect("four sequences").reshape(vec![b, h, w, c])?.permute(&[0, 3, 1, 2])
}

pub fn cross_scan_tensor<T: Real>(g: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    let tape = Tape::inference();
    let seqs = cross_scan(tape.constant(g.clone()))?;
    Ok(seqs.map(|s| (*s.value()).clone()))
}

pub fn cross_merge_tensor<T: Real>(seqs: &[Tensor<T>; 4], h: usize, w: usize) -> Result<Tensor<T>> {
    let tape = Tape::inference();
    let vars = [0, 1, 2, 3].map(|i| tape.constant(seqs[i].clone()));
    Ok((*cross_merge(vars, h, w)?.value()).clone())
}

/// Cross scan -> per-direction selective scan -> cross merge.
#[derive(Clone, Debug)]
pub struct Ss2d {
    pub channels: usize,
    ssms: [SelectiveSsm; 4],
}

impl Ss2d {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, state: usize) -> Result<Self> {
        let mut mk = |d: ScanDirection| SelectiveSsm::build(&mut b.sub(format!("{d:?}").to_lowercase()), channels, state);
        Ok(Self {
            channels,
            ssms: [
                mk(ScanDirection::RowMajor)?,
                mk(ScanDirection::ColMajor)?,
                mk(ScanDirection::RowMajorReversed)?,
                mk(ScanDirection::ColMajorReversed)?,
            ],
        })
    }

    pub fn ssm(&self, d: ScanDirection) -> &SelectiveSsm {
        &self.ssms[ScanDirection::ALL.iter().position(|&x| x == d).unwrap()]
    }

    pub fn params<T: Real>(&self, store: &ParamStore<T>) -> [SsmParams<T>; 4] {
        [0, 1, 2, 3].map(|i| self.ssms[i].params(store))
    }

    pub fn set_params<T: Real>(&self, store: &mut ParamStore<T>, params: [SsmParams<T>; 4]) -> Result<()> {
        for (s, p) in self.ssms.iter().zip(params) {
            s.set_params(store, p)?;
        }
        Ok(())
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (_, c, h, w) = grid_dims(&x.shape())?;
        if c != self.channels {
            return Err(Error::shape("ss2d", format!("expected {} channels, got {c}", self.channels)));
        }
        let seqs = cross_scan(x)?;
        let mut outs = Vec::with_capacity(4);
        for (ssm, s) in self.ssms.iter().zip(seqs) {
            outs.push(ssm.forward(ctx, s)?);
        }
        cross_merge([outs[0], outs[1], outs[2], outs[3]], h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_orders() {
        // a=0 b=1 / c=2 d=3
        assert_eq!(ScanDirection::RowMajor.order(2, 2), vec![0, 1, 2, 3]);
        assert_eq!(ScanDirection::ColMajor.order(2, 2), vec![0, 2, 1, 3]);
        assert_eq!(ScanDirection::RowMajorReversed.order(2, 2), vec![3, 2, 1, 0]);
        assert_eq!(ScanDirection::ColMajorReversed.order(2, 2), vec![3, 1, 2, 0]);
    }

    #[test]
    fn token_sequences_for_2x2() {
        let g = Tensor::<f64>::from_f64([1, 1, 2, 2], &[10.0, 11.0, 12.0, 13.0]).unwrap();
        let s = cross_scan_tensor(&g).unwrap();
        assert_eq!(s[0].data(), &[10.0, 11.0, 12.0, 13.0]);
        assert_eq!(s[1].data(), &[10.0, 12.0, 11.0, 13.0]);
        assert_eq!(s[2].data(), &[13.0, 12.0, 11.0, 10.0]);
        assert_eq!(s[3].data(), &[13.0, 11.0, 12.0, 10.0]);
    }

    #[test]
    fn single_token_grid() {
        let g = Tensor::<f64>::from_f64([1, 3, 1, 1], &[1.0, 2.0, 3.0]).unwrap();
        for s in cross_scan_tensor(&g).unwrap() {
            assert_eq!(s.shape(), &[1, 1, 3]);
            assert_eq!(s.data(), &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn one_direction_merges_to_grid() {
        let data: Vec<f64> = (0..2 * 6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let g = Tensor::<f64>::from_f64([1, 2, 2, 3], &data).unwrap();
        let s = cross_scan_tensor(&g).unwrap();
        let z = Tensor::zeros([1, 6, 2]);
        let merged = cross_merge_tensor(&[s[0].clone(), z.clone(), z.clone(), z], 2, 3).unwrap();
        assert_eq!(merged, g);
    }

    #[test]
    fn merge_rejects_mismatch() {
        let a = Tensor::<f64>::zeros([1, 6, 2]);
        let b = Tensor::<f64>::zeros([1, 6, 3]);
        assert!(cross_merge_tensor(&[a.clone(), a.clone(), a, b], 2, 3).is_err());
        let a = Tensor::<f64>::zeros([1, 6, 2]);
        assert!(cross_merge_tensor(&[a.clone(), a.clone(), a.clone(), a], 2, 2).is_err());
    }
}
