//! Network blocks: Mamba, Vanilla VSS, VSS, residual conv, U-Mamba, RVM and
//! shifted-window attention. Every block maps `[B, C, H, W]` to the same
//! shape, except [`MambaBlock`] which maps `[B, L, C]` token sequences.
//!
//! Normalization is pre-norm layer normalization over channels everywhere.
//! 2-D maps are flattened to tokens in row-major order before any 1-D scan.

mod mamba;
mod residual;
mod swin;
mod vss;

pub use mamba::{MambaBlock, MambaMixer, RvmLayer, UMambaBlock, CONV1D_KERNEL};
pub use residual::ResidualConv;
pub use swin::{
    invert, relative_position_index, shift_mask, shift_size, symmetric_pad, window_order, SwinBlock, WindowAttention,
    MASK_VALUE,
};
pub use vss::{VanillaVss, Vss, FFN_EXPANSION};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Builder, Ctx, ParamId};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    MambaBlock,
    VanillaVss,
    Vss,
    ResidualConv,
    UMambaBlock,
    RvmLayer,
    SwinWindowAttention,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub kind: BlockKind,
    pub channels: usize,
    pub state: usize,
    pub expand: usize,
    pub window: usize,
    pub shifted: bool,
    pub heads: usize,
}

impl BlockConfig {
    pub fn new(kind: BlockKind, channels: usize) -> Self {
        Self { kind, channels, state: 16, expand: 2, window: 7, shifted: false, heads: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.expand == 0 || self.state == 0 {
            return Err(Error::InvalidSpec(format!("block {:?} needs positive channels/expand/state", self.kind)));
        }
        if self.kind == BlockKind::SwinWindowAttention {
            if self.window == 0 {
                return Err(Error::InvalidSpec("window size must be >= 1".into()));
            }
            if self.heads == 0 || self.channels % self.heads != 0 {
                return Err(Error::InvalidSpec(format!(
                    "{} channels not divisible by {} heads",
                    self.channels, self.heads
                )));
            }
        }
        Ok(())
    }
}

/// Any block, built from a [`BlockConfig`]. `SwinWindowAttention` builds a
/// full [`SwinBlock`] (attention and MLP, each with a residual).
#[derive(Clone, Debug)]
pub enum Block {
    Mamba(MambaBlock),
    VanillaVss(VanillaVss),
    Vss(Vss),
    ResidualConv(ResidualConv),
    UMamba(UMambaBlock),
    Rvm(RvmLayer),
    Swin(SwinBlock),
}

impl Block {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, cfg: &BlockConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(match cfg.kind {
            BlockKind::MambaBlock => Block::Mamba(MambaBlock::build(b, c, cfg.expand, cfg.state)?),
            BlockKind::VanillaVss => Block::VanillaVss(VanillaVss::build(b, c, cfg.expand, cfg.state)?),
            BlockKind::Vss => Block::Vss(Vss::build(b, c, cfg.expand, cfg.state)?),
            BlockKind::ResidualConv => Block::ResidualConv(ResidualConv::build(b, c)?),
            BlockKind::UMambaBlock => Block::UMamba(UMambaBlock::build(b, c, cfg.expand, cfg.state)?),
            BlockKind::RvmLayer => Block::Rvm(RvmLayer::build(b, c, cfg.expand, cfg.state)?),
            BlockKind::SwinWindowAttention => Block::Swin(SwinBlock::build(b, c, cfg.heads, cfg.window, cfg.shifted)?),
        })
    }

    pub fn kind(&self) -> BlockKind {
        match self {
            Block::Mamba(_) => BlockKind::MambaBlock,
            Block::VanillaVss(_) => BlockKind::VanillaVss,
            Block::Vss(_) => BlockKind::Vss,
            Block::ResidualConv(_) => BlockKind::ResidualConv,
            Block::UMamba(_) => BlockKind::UMambaBlock,
            Block::Rvm(_) => BlockKind::RvmLayer,
            Block::Swin(_) => BlockKind::SwinWindowAttention,
        }
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Block::Mamba(m) => m.forward(ctx, x),
            Block::VanillaVss(m) => m.forward(ctx, x),
            Block::Vss(m) => m.forward(ctx, x),
            Block::ResidualConv(m) => m.forward(ctx, x),
            Block::UMamba(m) => m.forward(ctx, x),
            Block::Rvm(m) => m.forward(ctx, x),
            Block::Swin(m) => m.forward(ctx, x),
        }
    }

    /// Parameters whose zeroing turns the block into the identity map
    /// (for an RVM layer, zeroing the residual scale does the same).
    pub fn final_projections(&self) -> Vec<ParamId> {
        match self {
            Block::Mamba(m) => m.final_projections(),
            Block::VanillaVss(m) => m.final_projections(),
            Block::Vss(m) => m.final_projections(),
            Block::ResidualConv(m) => m.final_projections(),
            Block::UMamba(m) => m.final_projections(),
            Block::Rvm(m) => m.final_projections(),
            Block::Swin(m) => m.final_projections(),
        }
    }
}
