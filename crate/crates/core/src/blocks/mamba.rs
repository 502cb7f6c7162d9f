use super::ResidualConv;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{flatten_tokens, unflatten_tokens, CausalConv1d, LayerNorm, Linear};
use crate::params::{Builder, Ctx, ParamId};
use crate::ssm::SelectiveSsm;
use crate::tensor::{Real, Tensor};

pub const CONV1D_KERNEL: usize = 4;

/// The gated selective-scan mixer of a Mamba block, without norm or residual:
/// `out(ssm(silu(conv(in_x(x)))) ⊙ silu(in_z(x)))`.
#[derive(Clone, Debug)]
pub struct MambaMixer {
    pub channels: usize,
    pub inner: usize,
    in_proj: Linear,
    conv: CausalConv1d,
    ssm: SelectiveSsm,
    out_proj: Linear,
}

impl MambaMixer {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, expand: usize, state: usize) -> Result<Self> {
        let inner = channels * expand;
        Ok(Self {
            channels,
            inner,
            in_proj: Linear::build(&mut b.sub("in_proj"), channels, 2 * inner, false)?,
            conv: CausalConv1d::build(&mut b.sub("conv1d"), inner, CONV1D_KERNEL)?,
            ssm: SelectiveSsm::build(&mut b.sub("ssm"), inner, state)?,
            out_proj: Linear::build(&mut b.sub("out_proj"), inner, channels, false)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let xz = self.in_proj.forward(ctx, x)?;
        let xs = xz.narrow(2, 0, self.inner)?;
        let z = xz.narrow(2, self.inner, self.inner)?;
        let xs = self.conv.forward(ctx, xs)?.silu()?;
        let y = self.ssm.forward(ctx, xs)?;
        self.out_proj.forward(ctx, y.mul(z.silu()?)?)
    }

    pub fn ssm(&self) -> &SelectiveSsm {
        &self.ssm
    }

    pub fn final_projections(&self) -> Vec<ParamId> {
        self.out_proj.params()
    }
}

/// Pre-norm residual Mamba block over `[B, L, C]` tokens.
#[derive(Clone, Debug)]
pub struct MambaBlock {
    norm: LayerNorm,
    mixer: MambaMixer,
}

impl MambaBlock {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, expand: usize, state: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::build(&mut b.sub("norm"), channels)?,
            mixer: MambaMixer::build(&mut b.sub("mixer"), channels, expand, state)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.mixer.channels {
            return Err(Error::shape("mamba_block", format!("expected [B, L, {}], got {s:?}", self.mixer.channels)));
        }
        x.add(self.mixer.forward(ctx, self.norm.forward(ctx, x)?)?)
    }

    pub fn final_projections(&self) -> Vec<ParamId> {
        self.mixer.final_projections()
    }
}

/// Two residual conv blocks followed by a Mamba block over the row-major
/// flattened grid.
#[derive(Clone, Debug)]
pub struct UMambaBlock {
    res1: ResidualConv,
    res2: ResidualConv,
    mamba: MambaBlock,
}

impl UMambaBlock {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, expand: usize, state: usize) -> Result<Self> {
        Ok(Self {
            res1: ResidualConv::build(&mut b.sub("res1"), channels)?,
            res2: ResidualConv::build(&mut b.sub("res2"), channels)?,
            mamba: MambaBlock::build(&mut b.sub("mamba"), channels, expand, state)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let y = self.res2.forward(ctx, self.res1.forward(ctx, x)?)?;
        let t = self.mamba.forward(ctx, flatten_tokens(y)?)?;
        unflatten_tokens(t, h, w)
    }

    pub fn residual_blocks(&self) -> [&ResidualConv; 2] {
        [&self.res1, &self.res2]
    }

    pub fn mamba(&self) -> &MambaBlock {
        &self.mamba
    }

    pub fn final_projections(&self) -> Vec<ParamId> {
        let mut v = self.res1.final_projections();
        v.extend(self.res2.final_projections());
        v.extend(self.mamba.final_projections());
        v
    }
}

/// Residual vision Mamba layer: `x + s · mixer(norm(tokens(x)))` with a
/// learned scalar `s`; channels and resolution are unchanged.
#[derive(Clone, Debug)]
pub struct RvmLayer {
    norm: LayerNorm,
    mixer: MambaMixer,
    pub scale: ParamId,
}

impl RvmLayer {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, expand: usize, state: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::build(&mut b.sub("norm"), channels)?,
            mixer: MambaMixer::build(&mut b.sub("mixer"), channels, expand, state)?,
            scale: b.add("scale", Tensor::ones([1]))?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let t = flatten_tokens(x)?;
        let y = self.mixer.forward(ctx, self.norm.forward(ctx, t)?)?.mul(ctx.param(self.scale))?;
        x.add(unflatten_tokens(y, h, w)?)
    }

    pub fn final_projections(&self) -> Vec<ParamId> {
        self.mixer.final_projections()
    }
}
