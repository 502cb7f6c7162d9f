use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, LayerNorm, Linear};
use crate::params::{Builder, Ctx, ParamId};
use crate::scan2d::Ss2d;
use crate::tensor::Real;

pub const FFN_EXPANSION: usize = 4;

fn check<T: Real>(x: &Var<'_, T>, c: usize, op: &'static str) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != c {
        return Err(Error::shape(op, format!("expected [B, {c}, H, W], got {s:?}")));
    }
    Ok(())
}

/// The SS2D branch shared by both VSS variants, operating channel-last:
/// `in_proj -> dwconv3x3 -> SiLU -> SS2D -> norm`.
#[derive(Clone, Debug)]
struct Ss2dBranch {
    inner: usize,
    dwconv: Conv2d,
    ss2d: Ss2d,
    out_norm: LayerNorm,
}

impl Ss2dBranch {
    fn build<T: Real>(b: &mut Builder<'_, T>, inner: usize, state: usize) -> Result<Self> {
        Ok(Self {
            inner,
            dwconv: Conv2d::build(&mut b.sub("dwconv"), inner, inner, 3, 1, 1, inner)?,
            ss2d: Ss2d::build(&mut b.sub("ss2d"), inner, state)?,
            out_norm: LayerNorm::build(&mut b.sub("out_norm"), inner)?,
        })
    }

    /// `x`: `[B, H, W, E]` -> `[B, H, W, E]`.
    fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.dwconv.forward(ctx, x.permute(&[0, 3, 1, 2])?)?.silu()?;
        let y = self.ss2d.forward(ctx, y)?.permute(&[0, 2, 3, 1])?;
        self.out_norm.forward(ctx, y)
    }
}

/// Mamba-block topology on 2-D maps: depthwise 2-D conv replaces the 1-D
/// conv, SS2D replaces the selective scan, plus an output normalization.
#[derive(Clone, Debug)]
pub struct VanillaVss {
    channels: usize,
    norm: LayerNorm,
    in_proj: Linear,
    branch: Ss2dBranch,
    out_proj: Linear,
}

impl VanillaVss {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, expand: usize, state: usize) -> Result<Self> {
        let inner = channels * expand;
        Ok(Self {
            channels,
            norm: LayerNorm::build(&mut b.sub("norm"), channels)?,
            in_proj: Linear::build(&mut b.sub("in_proj"), channels, 2 * inner, false)?,
            branch: Ss2dBranch::build(&mut b.sub("branch"), inner, state)?,
            out_proj: Linear::build(&mut b.sub("out_proj"), inner, channels, false)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        check(&x, self.channels, "vanilla_vss_block")?;
        let t = x.permute(&[0, 2, 3, 1])?;
        let xz = self.in_proj.forward(ctx, self.norm.forward(ctx, t)?)?;
        let e = self.branch.inner;
        let y = self.branch.forward(ctx, xz.narrow(3, 0, e)?)?;
        let y = y.mul(xz.narrow(3, e, e)?.silu()?)?;
        let y = self.out_proj.forward(ctx, y)?;
        x.add(y.permute(&[0, 3, 1, 2])?)
    }

    pub fn final_projections(&self) -> Vec<ParamId> {
        self.out_proj.params()
    }
}

/// Single-branch VSS block: `y = x + SS2D-branch(norm(x))`, then
/// `y + MLP(norm(y))` with a GELU MLP of expansion 4.
#[derive(Clone, Debug)]
pub struct Vss {
    channels: usize,
    norm1: LayerNorm,
    in_proj: Linear,
    branch: Ss2dBranch,
    out_proj: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl Vss {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, expand: usize, state: usize) -> Result<Self> {
        let inner = channels * expand;
        let hidden = channels * FFN_EXPANSION;
        Ok(Self {
            channels,
            norm1: LayerNorm::build(&mut b.sub("norm1"), channels)?,
            in_proj: Linear::build(&mut b.sub("in_proj"), channels, inner, false)?,
            branch: Ss2dBranch::build(&mut b.sub("branch"), inner, state)?,
            out_proj: Linear::build(&mut b.sub("out_proj"), inner, channels, false)?,
            norm2: LayerNorm::build(&mut b.sub("norm2"), channels)?,
            fc1: Linear::build(&mut b.sub("fc1"), channels, hidden, true)?,
            fc2: Linear::build(&mut b.sub("fc2"), hidden, channels, true)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        check(&x, self.channels, "vss_block")?;
        let t = x.permute(&[0, 2, 3, 1])?;
        let h = self.in_proj.forward(ctx, self.norm1.forward(ctx, t)?)?;
        let t = t.add(self.out_proj.forward(ctx, self.branch.forward(ctx, h)?)?)?;
        let m = self.fc1.forward(ctx, self.norm2.forward(ctx, t)?)?.gelu()?;
        let t = t.add(self.fc2.forward(ctx, m)?)?;
        t.permute(&[0, 3, 1, 2])
    }

    pub fn final_projections(&self) -> Vec<ParamId> {
        let mut v = self.out_proj.params();
        v.extend(self.fc2.params());
        v
    }
}
