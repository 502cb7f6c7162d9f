//! Windowed multi-head self-attention with optional half-window cyclic shift.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::params::{Builder, Ctx, ParamId};
use crate::tensor::{Real, Tensor};

/// Additive score for token pairs that straddle a wrapped boundary.
pub const MASK_VALUE: f64 = -1e4;

/// Padding `(before, after)` that makes `extent` a multiple of `window`,
/// split symmetrically (the extra pixel goes after).
pub fn symmetric_pad(extent: usize, window: usize) -> (usize, usize) {
    let total = (window - extent % window) % window;
    (total / 2, total - total / 2)
}

/// Shift applied before partitioning.
pub fn shift_size(window: usize, shifted: bool) -> usize {
    if shifted {
        window / 2
    } else {
        0
    }
}

/// For a padded `hp x wp` grid: (window, position-in-window) -> row-major
/// grid index of the token that lands there after a cyclic shift by
/// `-shift` on both axes. Windows are enumerated row-major.
pub fn window_order(hp: usize, wp: usize, window: usize, shift: usize) -> Vec<usize> {
    let (nh, nw) = (hp / window, wp / window);
    let mut order = Vec::with_capacity(hp * wp);
    for wr in 0..nh {
        for wc in 0..nw {
            for i in 0..window {
                for j in 0..window {
                    let r = (wr * window + i + shift) % hp;
                    let c = (wc * window + j + shift) % wp;
                    order.push(r * wp + c);
                }
            }
        }
    }
    order
}

pub fn invert(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (p, &g) in order.iter().enumerate() {
        inv[g] = p;
    }
    inv
}

/// `[(2w-1)^2]`-table index for every pair of positions in a window.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let t = window * window;
    let mut idx = Vec::with_capacity(t * t);
    for p in 0..t {
        for q in 0..t {
            let (r1, c1) = (p / window, p % window);
            let (r2, c2) = (q / window, q % window);
            idx.push((r1 + window - 1 - r2) * (2 * window - 1) + (c1 + window - 1 - c2));
        }
    }
    idx
}

/// `[nW, T, T]` additive mask separating regions that were not adjacent
/// before the cyclic shift.
pub fn shift_mask(hp: usize, wp: usize, window: usize, shift: usize) -> Vec<f64> {
    let region = |x: usize, extent: usize| {
        if x < extent - window {
            0
        } else if x < extent - shift {
            1
        } else {
            2
        }
    };
    let (nh, nw) = (hp / window, wp / window);
    let t = window * window;
    let mut mask = Vec::with_capacity(nh * nw * t * t);
    for wr in 0..nh {
        for wc in 0..nw {
            let ids: Vec<usize> = (0..t)
                .map(|p| {
                    let (r, c) = (wr * window + p / window, wc * window + p % window);
                    3 * region(r, hp) + region(c, wp)
                })
                .collect();
            for p in 0..t {
                for q in 0..t {
                    mask.push(if ids[p] == ids[q] { 0.0 } else { MASK_VALUE });
                }
            }
        }
    }
    mask
}

#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub shifted: bool,
    pub qkv: Linear,
    pub proj: Linear,
    pub bias_table: ParamId,
}

impl WindowAttention {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, heads: usize, window: usize, shifted: bool) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::InvalidSpec(format!("{channels} channels not divisible by {heads} heads")));
        }
        if window == 0 {
            return Err(Error::InvalidSpec("window size must be >= 1".into()));
        }
        let span = 2 * window - 1;
        Ok(Self {
            channels,
            heads,
            window,
            shifted,
            qkv: Linear::build(&mut b.sub("qkv"), channels, 3 * channels, true)?,
            proj: Linear::build(&mut b.sub("proj"), channels, channels, true)?,
            bias_table: b.uniform("rel_bias", vec![span * span, heads], 0.02)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_weights(ctx, x)?.0)
    }

    /// Also returns the post-softmax attention weights `[B·nW, heads, T, T]`.
    pub fn forward_with_weights<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape("swin_window_attention", format!("expected [B, {}, H, W], got {s:?}", self.channels)));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let ws = self.window;
        let (pt, pb) = symmetric_pad(h, ws);
        let (pl, pr) = symmetric_pad(w, ws);
        let (hp, wp) = (h + pt + pb, w + pl + pr);
        let shift = shift_size(ws, self.shifted);
        let order = window_order(hp, wp, ws, shift);
        let n_win = (hp / ws) * (wp / ws);
        let t = ws * ws;
        let hd = c / self.heads;

        let tokens = x.pad2d(pt, pb, pl, pr)?.permute(&[0, 2, 3, 1])?.reshape(vec![b, hp * wp, c])?;
        let windows = tokens.index_select(1, &order)?.reshape(vec![b * n_win, t, c])?;

        let qkv = self
            .qkv
            .forward(ctx, windows)?
            .reshape(vec![b * n_win, t, 3, self.heads, hd])?
            .permute(&[2, 0, 3, 1, 4])?;
        let part = |i: usize| -> Result<Var<'t, T>> { qkv.narrow(0, i, 1)?.reshape(vec![b * n_win, self.heads, t, hd]) };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let scores = q.matmul(k.permute(&[0, 1, 3, 2])?)?.scale(1.0 / (hd as f64).sqrt())?;

        let bias = ctx
            .param(self.bias_table)
            .index_select(0, &relative_position_index(ws))?
            .permute(&[1, 0])?
            .reshape(vec![self.heads, t, t])?;
        let mut scores = scores.add(bias)?;
        if shift > 0 {
            let mask = ctx.constant(Tensor::from_f64([n_win, 1, t, t], &shift_mask(hp, wp, ws, shift))?);
            scores = scores.reshape(vec![b, n_win, self.heads, t, t])?.add(mask)?.reshape(vec![b * n_win, self.heads, t, t])?;
        }
        let attn = scores.softmax(3)?;
        let out = attn.matmul(v)?.permute(&[0, 2, 1, 3])?.reshape(vec![b * n_win, t, c])?;
        let out = self.proj.forward(ctx, out)?.reshape(vec![b, hp * wp, c])?;
        let grid = out.index_select(1, &invert(&order))?.reshape(vec![b, hp, wp, c])?.permute(&[0, 3, 1, 2])?;
        let grid = if hp != h { grid.narrow(2, pt, h)? } else { grid };
        let grid = if wp != w { grid.narrow(3, pl, w)? } else { grid };
        Ok((grid, attn))
    }
}

/// Pre-norm transformer block around [`WindowAttention`]:
/// `y = x + attn(norm(x))`, `y + MLP(norm(y))`.
#[derive(Clone, Debug)]
pub struct SwinBlock {
    norm1: LayerNorm,
    pub attn: WindowAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl SwinBlock {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, heads: usize, window: usize, shifted: bool) -> Result<Self> {
        let hidden = channels * super::vss::FFN_EXPANSION;
        Ok(Self {
            norm1: LayerNorm::build(&mut b.sub("norm1"), channels)?,
            attn: WindowAttention::build(&mut b.sub("attn"), channels, heads, window, shifted)?,
            norm2: LayerNorm::build(&mut b.sub("norm2"), channels)?,
            fc1: Linear::build(&mut b.sub("fc1"), channels, hidden, true)?,
            fc2: Linear::build(&mut b.sub("fc2"), hidden, channels, true)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.add(self.attn.forward(ctx, self.norm1.forward_nchw(ctx, x)?)?)?;
        let t = y.permute(&[0, 2, 3, 1])?;
        let m = self.fc1.forward(ctx, self.norm2.forward(ctx, t)?)?.gelu()?;
        t.add(self.fc2.forward(ctx, m)?)?.permute(&[0, 3, 1, 2])
    }

    pub fn final_projections(&self) -> Vec<ParamId> {
        let mut v = self.attn.proj.params();
        v.extend(self.fc2.params());
        v
    }
}
