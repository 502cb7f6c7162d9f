//! Generic U-shaped segmentation network. All six variants share one builder
//! and differ only in [`placement`].

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Resample, Var};
use crate::blocks::{Block, BlockConfig, BlockKind};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::params::{Builder, Ctx, ParamId, ParamStore};
use crate::tensor::Real;

/// Bottleneck length fixed by the LightM-UNet design.
pub const LIGHTM_BOTTLENECK_RVM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    UMambaBot,
    UMambaEnc,
    LightMUNet,
    SwinUMamba,
    SwinUMambaD,
    SwinUNetR,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::UMambaBot,
        Variant::UMambaEnc,
        Variant::LightMUNet,
        Variant::SwinUMamba,
        Variant::SwinUMambaD,
        Variant::SwinUNetR,
    ];

    /// Identifier used in config files.
    pub fn key(self) -> &'static str {
        match self {
            Variant::UMambaBot => "umamba_bot",
            Variant::UMambaEnc => "umamba_enc",
            Variant::LightMUNet => "lightm_unet",
            Variant::SwinUMamba => "swin_umamba",
            Variant::SwinUMambaD => "swin_umamba_d",
            Variant::SwinUNetR => "swin_unetr",
        }
    }

    /// Human-readable model name used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::UMambaBot => "U-Mamba BOT",
            Variant::UMambaEnc => "U-Mamba ENC",
            Variant::LightMUNet => "LightM-UNet",
            Variant::SwinUMamba => "Swin-UMamba",
            Variant::SwinUMambaD => "Swin-UMamba D",
            Variant::SwinUNetR => "Swin UNetR",
        }
    }

    pub fn forces_deep_supervision(self) -> bool {
        matches!(self, Variant::SwinUMamba | Variant::SwinUMambaD)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown model variant {s:?}")))
    }
}

/// Block kind per (encoder, bottleneck, decoder) position.
///
/// | variant       | encoder      | bottleneck       | decoder      |
/// |---------------|--------------|------------------|--------------|
/// | umamba_bot    | ResidualConv | UMambaBlock      | ResidualConv |
/// | umamba_enc    | UMambaBlock  | UMambaBlock      | ResidualConv |
/// | lightm_unet   | RVMLayer     | RVMLayer (x4)    | ResidualConv |
/// | swin_umamba   | VSS          | VSS              | ResidualConv |
/// | swin_umamba_d | VSS          | VSS              | VSS          |
/// | swin_unetr    | Swin         | Swin             | ResidualConv |
pub fn placement(variant: Variant) -> [BlockKind; 3] {
    use BlockKind::*;
    match variant {
        Variant::UMambaBot => [ResidualConv, UMambaBlock, ResidualConv],
        Variant::UMambaEnc => [UMambaBlock, UMambaBlock, ResidualConv],
        Variant::LightMUNet => [RvmLayer, RvmLayer, ResidualConv],
        Variant::SwinUMamba => [Vss, Vss, ResidualConv],
        Variant::SwinUMambaD => [Vss, Vss, Vss],
        Variant::SwinUNetR => [SwinWindowAttention, SwinWindowAttention, ResidualConv],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsample {
    /// Nearest-neighbour doubling followed by a 1x1 convolution.
    Nearest,
    /// Stride-2 transposed 2x2 convolution followed by a 1x1 convolution.
    Transposed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub stage_channels: Vec<usize>,
    /// Encoder blocks per stage.
    pub depths: Vec<usize>,
    /// Blocks per decoder stage.
    pub decoder_depth: usize,
    pub bottleneck_depth: usize,
    pub in_channels: usize,
    pub classes: usize,
    pub deep_supervision: bool,
    pub state: usize,
    pub expand: usize,
    pub window: usize,
    pub heads: usize,
    pub upsample: Upsample,
}

impl ModelSpec {
    /// Three stages of `[8, 16, 32]` channels.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            stage_channels: vec![8, 16, 32],
            depths: vec![1, 1, 1],
            decoder_depth: 1,
            bottleneck_depth: if variant == Variant::LightMUNet { LIGHTM_BOTTLENECK_RVM } else { 1 },
            in_channels: 1,
            classes: 2,
            deep_supervision: variant.forces_deep_supervision(),
            state: 4,
            expand: 2,
            window: 4,
            heads: 2,
            upsample: Upsample::Nearest,
        }
    }

    /// Full-size presets, widths chosen so the counts land near 25M (Swin
    /// UNetR), 27M (Swin-UMamba D), 60M (Swin-UMamba), 104M (U-Mamba ENC) and
    /// 500M (U-Mamba BOT). Only the LightM-UNet count is checked.
    pub fn full(variant: Variant) -> Self {
        let base = Self::tiny(variant);
        let (channels, depths, decoder_depth, bottleneck_depth, state) = match variant {
            Variant::LightMUNet => (vec![32, 64, 128, 256], vec![1, 1, 1, 1], 1, LIGHTM_BOTTLENECK_RVM, 16),
            Variant::SwinUNetR => (vec![33, 66, 132, 264, 528], vec![2, 2, 2, 2, 2], 1, 2, 16),
            Variant::SwinUMambaD => (vec![48, 96, 192, 384], vec![2, 2, 2, 2], 1, 2, 16),
            Variant::SwinUMamba => (vec![36, 72, 144, 288, 576], vec![2, 2, 4, 2, 2], 1, 2, 16),
            Variant::UMambaEnc => (vec![39, 78, 156, 312, 624], vec![2, 2, 2, 2, 2], 2, 2, 16),
            Variant::UMambaBot => (vec![48, 96, 192, 384, 768, 1536], vec![2, 2, 2, 2, 2, 2], 2, 2, 16),
        };
        Self {
            stage_channels: channels,
            depths,
            decoder_depth,
            bottleneck_depth,
            state,
            window: 7,
            heads: 3,
            ..base
        }
    }

    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    /// Spatial extents must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (self.stages() - 1)
    }

    pub fn deep_supervision_enabled(&self) -> bool {
        self.deep_supervision || self.variant.forces_deep_supervision()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.stages() < 2 {
            return bad(format!("need at least 2 stages, got {}", self.stages()));
        }
        if self.depths.len() != self.stages() {
            return bad(format!("{} depths for {} stages", self.depths.len(), self.stages()));
        }
        if self.stage_channels[0] == 0 || self.stage_channels.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("stage channels must be positive and strictly increasing: {:?}", self.stage_channels));
        }
        if self.in_channels == 0 || self.classes < 2 {
            return bad(format!("in_channels={} classes={}", self.in_channels, self.classes));
        }
        if self.variant == Variant::LightMUNet && self.bottleneck_depth != LIGHTM_BOTTLENECK_RVM {
            return bad(format!("lightm_unet bottleneck holds exactly {LIGHTM_BOTTLENECK_RVM} RVM layers"));
        }
        for kind in placement(self.variant) {
            for &c in &self.stage_channels {
                self.block_config(kind, c, false).validate()?;
            }
        }
        Ok(())
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let d = self.divisor();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::shape("model_forward", format!("expected [B, {}, H, W], got {shape:?}", self.in_channels)));
        }
        if shape[2] % d != 0 || shape[3] % d != 0 {
            return Err(Error::shape("model_forward", format!("spatial extents {shape:?} not divisible by {d}")));
        }
        Ok(())
    }

    fn block_config(&self, kind: BlockKind, channels: usize, shifted: bool) -> BlockConfig {
        BlockConfig {
            kind,
            channels,
            state: self.state,
            expand: self.expand,
            window: self.window,
            shifted,
            heads: self.heads,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub down: Option<Conv2d>,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug)]
pub struct DecoderStage {
    /// Channel reduction after upsampling; absent at the deepest level.
    pub up: Option<(Option<ParamId>, Conv2d)>,
    /// 1x1 convolution fusing the concatenated skip.
    pub fuse: Conv2d,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub spec: ModelSpec,
    pub stem: Conv2d,
    pub encoder: Vec<EncoderStage>,
    pub bottleneck: Vec<Block>,
    pub decoder: Vec<DecoderStage>,
    pub head: Conv2d,
    /// Heads on decoder levels below full resolution, highest resolution first.
    pub aux_heads: Vec<Conv2d>,
}

pub struct Output<'t, T> {
    pub logits: Var<'t, T>,
    /// Auxiliary logits ordered by decreasing resolution.
    pub aux: Vec<Var<'t, T>>,
}

impl Network {
    pub fn build<T: Real>(spec: &ModelSpec, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder::new(store, rng);
        let ch = &spec.stage_channels;
        let n = spec.stages();
        let [enc_kind, bot_kind, dec_kind] = placement(spec.variant);
        // Window attention alternates plain and shifted windows along the encoder path.
        let mut swin_counter = 0usize;
        let mut next_shift = || {
            swin_counter += 1;
            swin_counter % 2 == 0
        };

        let stem = Conv2d::same(&mut b.sub("stem"), spec.in_channels, ch[0], 3)?;
        let mut encoder = Vec::with_capacity(n);
        for i in 0..n {
            let mut sb = b.sub(format!("encoder.{i}"));
            let down = if i > 0 { Some(Conv2d::build(&mut sb.sub("down"), ch[i - 1], ch[i], 3, 2, 1, 1)?) } else { None };
            let mut blocks = Vec::with_capacity(spec.depths[i]);
            for k in 0..spec.depths[i] {
                let cfg = spec.block_config(enc_kind, ch[i], next_shift());
                blocks.push(Block::build(&mut sb.sub(format!("block{k}")), &cfg)?);
            }
            encoder.push(EncoderStage { down, blocks });
        }
        let mut bottleneck = Vec::with_capacity(spec.bottleneck_depth);
        for k in 0..spec.bottleneck_depth {
            let cfg = spec.block_config(bot_kind, ch[n - 1], next_shift());
            bottleneck.push(Block::build(&mut b.sub(format!("bottleneck.block{k}")), &cfg)?);
        }
        let mut decoder = Vec::with_capacity(n);
        for j in 0..n {
            let level = n - 1 - j;
            let c = ch[level];
            let mut sb = b.sub(format!("decoder.{j}"));
            let up = if j == 0 {
                None
            } else {
                let cin = ch[level + 1];
                let tw = match spec.upsample {
                    Upsample::Nearest => None,
                    Upsample::Transposed => Some(sb.kaiming_uniform("up_transposed", vec![cin, cin, 2, 2], cin * 4)?),
                };
                Some((tw, Conv2d::build(&mut sb.sub("up"), cin, c, 1, 1, 0, 1)?))
            };
            let fuse = Conv2d::build(&mut sb.sub("fuse"), 2 * c, c, 1, 1, 0, 1)?;
            let mut blocks = Vec::with_capacity(spec.decoder_depth);
            for k in 0..spec.decoder_depth {
                let cfg = spec.block_config(dec_kind, c, k % 2 == 1);
                blocks.push(Block::build(&mut sb.sub(format!("block{k}")), &cfg)?);
            }
            decoder.push(DecoderStage { up, fuse, blocks });
        }
        let head = Conv2d::build(&mut b.sub("head"), ch[0], spec.classes, 1, 1, 0, 1)?;
        let mut aux_heads = Vec::new();
        if spec.deep_supervision_enabled() {
            for level in 1..n {
                aux_heads.push(Conv2d::build(&mut b.sub(format!("aux_head.{}", level - 1)), ch[level], spec.classes, 1, 1, 0, 1)?);
            }
        }
        Ok(Self { spec: spec.clone(), stem, encoder, bottleneck, decoder, head, aux_heads })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Output<'t, T>> {
        self.spec.check_input(&x.shape())?;
        let n = self.spec.stages();
        let mut h = self.stem.forward(ctx, x)?;
        let mut skips = Vec::with_capacity(n);
        for stage in &self.encoder {
            if let Some(down) = &stage.down {
                h = down.forward(ctx, h)?;
            }
            for block in &stage.blocks {
                h = block.forward(ctx, h)?;
            }
            skips.push(h);
        }
        for block in &self.bottleneck {
            h = block.forward(ctx, h)?;
        }
        let mut levels = Vec::with_capacity(n);
        for (j, stage) in self.decoder.iter().enumerate() {
            if let Some((tw, conv)) = &stage.up {
                h = match tw {
                    None => h.resample(Resample::UpsampleNearest2, None)?,
                    Some(w) => h.resample(Resample::TransposedConv2, Some(ctx.param(*w)))?,
                };
                h = conv.forward(ctx, h)?;
            }
            h = stage.fuse.forward(ctx, Var::concat(&[h, skips[n - 1 - j]], 1)?)?;
            for block in &stage.blocks {
                h = block.forward(ctx, h)?;
            }
            levels.push(h);
        }
        let logits = self.head.forward(ctx, h)?;
        // levels[j] sits at encoder level n-1-j; aux head k serves level k+1.
        let aux = self
            .aux_heads
            .iter()
            .enumerate()
            .map(|(k, head)| head.forward(ctx, levels[n - 2 - k]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Output { logits, aux })
    }

    pub fn encoder_kinds(&self) -> Vec<Vec<BlockKind>> {
        self.encoder.iter().map(|s| s.blocks.iter().map(Block::kind).collect()).collect()
    }

    pub fn bottleneck_kinds(&self) -> Vec<BlockKind> {
        self.bottleneck.iter().map(Block::kind).collect()
    }

    pub fn decoder_kinds(&self) -> Vec<Vec<BlockKind>> {
        self.decoder.iter().map(|s| s.blocks.iter().map(Block::kind).collect()).collect()
    }
}

/// Scalar parameter count of `spec` without allocating any weights.
pub fn count_params(spec: &ModelSpec) -> Result<usize> {
    let mut store = ParamStore::<f32>::shapes_only();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Network::build(spec, &mut store, &mut rng)?;
    Ok(store.count())
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: Network,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Deterministic in `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = Network::build(spec, &mut params, &mut rng)?;
        Ok(Self { net, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.net.spec
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn variant_keys_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.key().parse::<Variant>().unwrap(), v);
        }
        assert!("umamba".parse::<Variant>().is_err());
    }

    #[test]
    fn tiny_forward_shapes() {
        let model = Model::<f32>::build(&ModelSpec::tiny(Variant::UMambaBot), 0).unwrap();
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, &model.params, false);
        let x = ctx.constant(Tensor::zeros(vec![1, 1, 16, 16]));
        let out = model.net.forward(&ctx, x).unwrap();
        assert_eq!(out.logits.shape(), vec![1, 2, 16, 16]);
        assert!(out.aux.is_empty());
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = ModelSpec::tiny(Variant::UMambaBot);
        s.stage_channels = vec![8];
        s.depths = vec![1];
        assert!(s.validate().is_err());
        let mut s = ModelSpec::tiny(Variant::UMambaBot);
        s.stage_channels = vec![8, 8, 16];
        assert!(s.validate().is_err());
        let mut s = ModelSpec::tiny(Variant::LightMUNet);
        s.bottleneck_depth = 2;
        assert!(s.validate().is_err());
    }
}
