use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::{Conv2d, LayerNorm};
use crate::params::{Builder, Ctx, ParamId};
use crate::tensor::Real;

/// Pre-activation residual block: `x + conv(act(norm(conv(act(norm(x))))))`
/// with 3x3 convolutions that keep channels and resolution.
#[derive(Clone, Debug)]
pub struct ResidualConv {
    norm1: LayerNorm,
    conv1: Conv2d,
    norm2: LayerNorm,
    conv2: Conv2d,
}

impl ResidualConv {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::build(&mut b.sub("norm1"), channels)?,
            conv1: Conv2d::same(&mut b.sub("conv1"), channels, channels, 3)?,
            norm2: LayerNorm::build(&mut b.sub("norm2"), channels)?,
            conv2: Conv2d::same(&mut b.sub("conv2"), channels, channels, 3)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.norm1.forward_nchw(ctx, x)?.silu()?;
        let h = self.conv1.forward(ctx, h)?;
        let h = self.norm2.forward_nchw(ctx, h)?.silu()?;
        x.add(self.conv2.forward(ctx, h)?)
    }

    pub fn final_projections(&self) -> Vec<ParamId> {
        self.conv2.params()
    }
}
