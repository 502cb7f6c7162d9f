//! Parameterized layers shared by the blocks.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Builder, Ctx, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = b.kaiming_uniform("weight", vec![in_dim, out_dim], in_dim)?;
        let bias = if bias { Some(b.uniform("bias", vec![out_dim], 1.0 / (in_dim as f64).sqrt())?) } else { None };
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(ctx.param(self.weight), self.bias.map(|b| ctx.param(b)))
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2d {
    pub fn build<T: Real>(
        b: &mut Builder<'_, T>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        if in_ch % groups != 0 || out_ch % groups != 0 {
            return Err(Error::InvalidSpec(format!("conv {in_ch}->{out_ch} not divisible into {groups} groups")));
        }
        let fan_in = in_ch / groups * kernel * kernel;
        let weight = b.kaiming_uniform("weight", vec![out_ch, in_ch / groups, kernel, kernel], fan_in)?;
        let bias = Some(b.uniform("bias", vec![out_ch, 1, 1], 1.0 / (fan_in as f64).sqrt())?);
        Ok(Self { weight, bias, in_ch, out_ch, kernel, stride, padding, groups })
    }

    /// `kernel x kernel` convolution with "same" padding for odd kernels.
    pub fn same<T: Real>(b: &mut Builder<'_, T>, in_ch: usize, out_ch: usize, kernel: usize) -> Result<Self> {
        Self::build(b, in_ch, out_ch, kernel, 1, kernel / 2, 1)
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.conv2d(ctx.param(self.weight), self.stride, self.padding, self.groups)?;
        match self.bias {
            Some(b) => y.add(ctx.param(b)),
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Layer normalization over the last axis with a learned affine transform.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, dim: usize) -> Result<Self> {
        Ok(Self { weight: b.ones("weight", vec![dim])?, bias: b.zeros("bias", vec![dim])?, dim })
    }

    /// Normalizes channel-last input `[..., C]`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(&[self.dim], NORM_EPS)?.mul(ctx.param(self.weight))?.add(ctx.param(self.bias))
    }

    /// Normalizes the channel axis of `[B, C, H, W]` input.
    pub fn forward_nchw<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.forward(ctx, x.permute(&[0, 2, 3, 1])?)?;
        y.permute(&[0, 3, 1, 2])
    }
}

/// Depthwise causal 1-D convolution over `[B, L, C]` token sequences.
#[derive(Clone, Debug)]
pub struct CausalConv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub kernel: usize,
}

impl CausalConv1d {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, kernel: usize) -> Result<Self> {
        let bound = 1.0 / (kernel as f64).sqrt();
        Ok(Self {
            weight: b.uniform("weight", vec![channels, 1, 1, kernel], bound)?,
            bias: b.uniform("bias", vec![channels, 1, 1], bound)?,
            channels,
            kernel,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let (b, l, c) = (s[0], s[1], s[2]);
        let y = x
            .permute(&[0, 2, 1])?
            .reshape(vec![b, c, 1, l])?
            .pad2d(0, 0, self.kernel - 1, 0)?
            .conv2d(ctx.param(self.weight), 1, 0, c)?
            .add(ctx.param(self.bias))?;
        y.reshape(vec![b, c, l])?.permute(&[0, 2, 1])
    }
}

/// `[B, C, H, W]` -> `[B, H·W, C]` in row-major token order.
pub fn flatten_tokens<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("flatten_tokens", format!("expected [B, C, H, W], got {s:?}")));
    }
    x.permute(&[0, 2, 3, 1])?.reshape(vec![s[0], s[2] * s[3], s[1]])
}

/// Inverse of [`flatten_tokens`].
pub fn unflatten_tokens<'t, T: Real>(x: Var<'t, T>, h: usize, w: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::shape("unflatten_tokens", format!("{s:?} for a {h}x{w} grid")));
    }
    x.reshape(vec![s[0], h, w, s[2]])?.permute(&[0, 3, 1, 2])
}

/// Overwrites every listed parameter with zeros.
pub fn zero_params<T: Real>(store: &mut ParamStore<T>, ids: &[ParamId]) {
    for &id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::zeros(shape)).expect("same shape");
    }
}
