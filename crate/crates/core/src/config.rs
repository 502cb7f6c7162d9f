//! Flat `section.key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key is optional and
//! unknown keys are rejected. [`RunConfig::to_text`] emits the fully
//! resolved configuration, which parses back to an identical value.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{ModelSpec, Upsample, Variant};
use crate::train::{Algorithm, LossConfig, OptimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Tiny,
    Full,
}

/// Which folds `train` runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldSelect {
    All,
    One(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub preset: Preset,
    pub stage_channels: Option<Vec<usize>>,
    pub depths: Option<Vec<usize>>,
    pub decoder_depth: Option<usize>,
    pub bottleneck_depth: Option<usize>,
    pub state: Option<usize>,
    pub expand: Option<usize>,
    pub window: Option<usize>,
    pub heads: Option<usize>,
    pub deep_supervision: Option<bool>,
    pub upsample: Upsample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    /// Side length samples are prepared at.
    pub size: usize,
    pub folds: usize,
    pub fold: FoldSelect,
    pub split_seed: u64,
    /// Train and validate on the full sample set (no held-out fold).
    pub overfit: bool,
    pub augment: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub eval_every: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                variant: Variant::UMambaBot,
                preset: Preset::Tiny,
                stage_channels: None,
                depths: None,
                decoder_depth: None,
                bottleneck_depth: None,
                state: None,
                expand: None,
                window: None,
                heads: None,
                deep_supervision: None,
                upsample: Upsample::Nearest,
            },
            data: DataConfig {
                manifest: None,
                size: crate::data::DEFAULT_SIZE,
                folds: 5,
                fold: FoldSelect::All,
                split_seed: 0,
                overfit: false,
                augment: false,
            },
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig { eval_every: 1, threshold: 0.5 },
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value.parse().map_err(|e: V::Err| Error::Config { key: key.into(), reason: format!("{value:?}: {e}") })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { key: "--config".into(), reason: format!("{}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                reason: format!("line {} is not `key = value`", n + 1),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "model.variant" => m.variant = value.parse().map_err(|e: Error| Error::Config { key: key.into(), reason: e.to_string() })?,
            "model.preset" => {
                m.preset = match value {
                    "tiny" => Preset::Tiny,
                    "full" => Preset::Full,
                    _ => return Err(Error::Config { key: key.into(), reason: format!("{value:?}: expected tiny or full") }),
                }
            }
            "model.stage_channels" => m.stage_channels = Some(parse_list(key, value)?),
            "model.depths" => m.depths = Some(parse_list(key, value)?),
            "model.decoder_depth" => m.decoder_depth = Some(parse(key, value)?),
            "model.bottleneck_depth" => m.bottleneck_depth = Some(parse(key, value)?),
            "model.state" => m.state = Some(parse(key, value)?),
            "model.expand" => m.expand = Some(parse(key, value)?),
            "model.window" => m.window = Some(parse(key, value)?),
            "model.heads" => m.heads = Some(parse(key, value)?),
            "model.deep_supervision" => m.deep_supervision = Some(parse(key, value)?),
            "model.upsample" => {
                m.upsample = match value {
                    "nearest" => Upsample::Nearest,
                    "transposed" => Upsample::Transposed,
                    _ => return Err(Error::Config { key: key.into(), reason: format!("{value:?}: expected nearest or transposed") }),
                }
            }
            "data.manifest" => self.data.manifest = (!value.is_empty()).then(|| PathBuf::from(value)),
            "data.size" => self.data.size = parse(key, value)?,
            "data.folds" => self.data.folds = parse(key, value)?,
            "data.fold" => {
                self.data.fold = if value == "all" { FoldSelect::All } else { FoldSelect::One(parse(key, value)?) }
            }
            "data.split_seed" => self.data.split_seed = parse(key, value)?,
            "data.overfit" => self.data.overfit = parse(key, value)?,
            "data.augment" => self.data.augment = parse(key, value)?,
            "loss.dice_weight" => self.loss.dice_weight = parse(key, value)?,
            "loss.ce_weight" => self.loss.ce_weight = parse(key, value)?,
            "loss.gamma" => self.loss.gamma = parse(key, value)?,
            "loss.epsilon" => self.loss.epsilon = parse(key, value)?,
            "optim.algorithm" => {
                self.optim.algorithm = match value {
                    "adam" => Algorithm::Adam,
                    "sgd" => Algorithm::Sgd,
                    _ => return Err(Error::Config { key: key.into(), reason: format!("{value:?}: expected adam or sgd") }),
                }
            }
            "optim.lr" => self.optim.lr = parse(key, value)?,
            "optim.beta1" => self.optim.beta1 = parse(key, value)?,
            "optim.beta2" => self.optim.beta2 = parse(key, value)?,
            "optim.eps" => self.optim.eps = parse(key, value)?,
            "optim.momentum" => self.optim.momentum = parse(key, value)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, value)?,
            "optim.clip_norm" => self.optim.clip_norm = parse(key, value)?,
            "train.steps" => self.optim.steps = parse(key, value)?,
            "train.batch_size" => self.optim.batch_size = parse(key, value)?,
            "train.seed" => self.optim.seed = parse(key, value)?,
            "train.eval_every" => self.train.eval_every = parse(key, value)?,
            "train.threshold" => self.train.threshold = parse(key, value)?,
            "out.dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::Config { key: key.into(), reason: "unknown key".into() }),
        }
        Ok(())
    }

    /// The network described by the `model.*` keys.
    pub fn model_spec(&self) -> ModelSpec {
        let m = &self.model;
        let mut s = match m.preset {
            Preset::Tiny => ModelSpec::tiny(m.variant),
            Preset::Full => ModelSpec::full(m.variant),
        };
        if let Some(v) = &m.stage_channels {
            s.stage_channels = v.clone();
        }
        if let Some(v) = &m.depths {
            s.depths = v.clone();
        }
        s.decoder_depth = m.decoder_depth.unwrap_or(s.decoder_depth);
        s.bottleneck_depth = m.bottleneck_depth.unwrap_or(s.bottleneck_depth);
        s.state = m.state.unwrap_or(s.state);
        s.expand = m.expand.unwrap_or(s.expand);
        s.window = m.window.unwrap_or(s.window);
        s.heads = m.heads.unwrap_or(s.heads);
        s.deep_supervision = m.deep_supervision.unwrap_or(s.deep_supervision);
        s.upsample = m.upsample;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |key: &str, reason: String| Err(Error::Config { key: key.into(), reason });
        self.model_spec().validate().map_err(|e| Error::Config { key: "model".into(), reason: e.to_string() })?;
        self.loss.validate()?;
        self.optim.validate()?;
        let spec = self.model_spec();
        if self.data.size == 0 || self.data.size % spec.divisor() != 0 {
            return cfg_err("data.size", format!("{} is not a positive multiple of {}", self.data.size, spec.divisor()));
        }
        if !self.data.overfit {
            if self.data.folds < 2 {
                return cfg_err("data.folds", format!("need at least 2 folds, got {}", self.data.folds));
            }
            if let FoldSelect::One(k) = self.data.fold {
                if k >= self.data.folds {
                    return cfg_err("data.fold", format!("fold {k} out of range for {} folds", self.data.folds));
                }
            }
        }
        if self.train.eval_every == 0 {
            return cfg_err("train.eval_every", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.train.threshold) {
            return cfg_err("train.threshold", format!("{} is outside [0, 1]", self.train.threshold));
        }
        Ok(())
    }

    /// Every key with its effective value, one per line, sorted by key.
    pub fn to_text(&self) -> String {
        let s = self.model_spec();
        let o = &self.optim;
        let mut lines = vec![
            ("model.variant", self.model.variant.key().to_string()),
            ("model.preset", match self.model.preset { Preset::Tiny => "tiny", Preset::Full => "full" }.into()),
            ("model.stage_channels", join(&s.stage_channels)),
            ("model.depths", join(&s.depths)),
            ("model.decoder_depth", s.decoder_depth.to_string()),
            ("model.bottleneck_depth", s.bottleneck_depth.to_string()),
            ("model.state", s.state.to_string()),
            ("model.expand", s.expand.to_string()),
            ("model.window", s.window.to_string()),
            ("model.heads", s.heads.to_string()),
            ("model.deep_supervision", bool_str(s.deep_supervision).into()),
            ("model.upsample", match s.upsample { Upsample::Nearest => "nearest", Upsample::Transposed => "transposed" }.into()),
            ("data.manifest", self.data.manifest.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("data.size", self.data.size.to_string()),
            ("data.folds", self.data.folds.to_string()),
            ("data.fold", match self.data.fold { FoldSelect::All => "all".into(), FoldSelect::One(k) => k.to_string() }),
            ("data.split_seed", self.data.split_seed.to_string()),
            ("data.overfit", bool_str(self.data.overfit).into()),
            ("data.augment", bool_str(self.data.augment).into()),
            ("loss.dice_weight", self.loss.dice_weight.to_string()),
            ("loss.ce_weight", self.loss.ce_weight.to_string()),
            ("loss.gamma", self.loss.gamma.to_string()),
            ("loss.epsilon", self.loss.epsilon.to_string()),
            ("optim.algorithm", match o.algorithm { Algorithm::Adam => "adam", Algorithm::Sgd => "sgd" }.into()),
            ("optim.lr", o.lr.to_string()),
            ("optim.beta1", o.beta1.to_string()),
            ("optim.beta2", o.beta2.to_string()),
            ("optim.eps", o.eps.to_string()),
            ("optim.momentum", o.momentum.to_string()),
            ("optim.weight_decay", o.weight_decay.to_string()),
            ("optim.clip_norm", o.clip_norm.to_string()),
            ("train.steps", o.steps.to_string()),
            ("train.batch_size", o.batch_size.to_string()),
            ("train.seed", o.seed.to_string()),
            ("train.eval_every", self.train.eval_every.to_string()),
            ("train.threshold", self.train.threshold.to_string()),
            ("out.dir", self.out_dir.display().to_string()),
        ];
        lines.sort_by_key(|(k, _)| *k);
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
