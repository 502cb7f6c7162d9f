//! Binary pixel masks.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-major `height x width` mask. Values are expected in `{0, 1}`; other
/// values are representable so that consumers can reject them.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("mask", format!("{height}x{width} needs {} values, got {}", height * width, data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.width + c] = v as u8;
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// In-place logical OR.
    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape("mask union", format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    pub fn invert(&self) -> Mask {
        Mask { height: self.height, width: self.width, data: self.data.iter().map(|&v| (v == 0) as u8).collect() }
    }

    /// Nearest-neighbour resampling: output pixel `(r, c)` takes the input
    /// pixel containing the output pixel centre.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Mask {
        let src = |dst: usize, n_dst: usize, n_src: usize| (((2 * dst + 1) * n_src) / (2 * n_dst)).min(n_src - 1);
        Mask::from_fn(height, width, |r, c| {
            self.get(src(r, height, self.height), src(c, width, self.width)) != 0
        })
    }

    /// Keeps pixel `(r·f, c·f)` for an integer factor `f`.
    pub fn decimate(&self, factor: usize) -> Result<Mask> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::shape("mask decimate", format!("{:?} by factor {factor}", self.dims())));
        }
        Ok(Mask::from_fn(self.height / factor, self.width / factor, |r, c| self.get(r * factor, c * factor) != 0))
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new([self.height, self.width], self.data.iter().map(|&v| T::of(v as f64)).collect())
            .expect("mask extents are positive")
    }

    /// Pixels `>= 0.5` become foreground.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Mask> {
        match t.shape() {
            [h, w] => Mask::new(*h, *w, t.data().iter().map(|v| (v.f64() >= 0.5) as u8).collect()),
            s => Err(Error::shape("mask from tensor", format!("expected [H, W], got {s:?}"))),
        }
    }
}
