//! Cross-validation driver: per-fold training with per-epoch validation,
//! best/last checkpoints and CSV logs.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::eval::evaluate;
use super::step::{train_step, Batch, TrainState};
use crate::config::{FoldSelect, RunConfig};
use crate::data::{augment, make_folds, FoldPlan, Sample};
use crate::error::{Error, Result};
use crate::metrics::{precision_recall_f1, ConfusionCounts, Prf};
use crate::models::Model;

pub const METRICS_HEADER: &str = "epoch,fold,loss,precision,recall,f1";
pub const LOSSES_HEADER: &str = "step,loss";

#[derive(Clone, Debug, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub dir: PathBuf,
    pub steps: u64,
    pub best_f1: Option<f64>,
    /// Validation metrics after the final step.
    pub last: Prf,
    pub losses: Vec<f64>,
}

pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold-{fold}"))
}

/// Keys allowed to change between a checkpoint and the resumed run.
const RESUMABLE_KEYS: [&str; 3] = ["train.steps", "train.eval_every", "out.dir"];

fn check_resume_config(saved: &str, current: &str) -> Result<()> {
    let parse = |t: &str| -> Vec<(String, String)> {
        t.lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .filter(|(k, _)| !RESUMABLE_KEYS.contains(&k.as_str()))
            .collect()
    };
    let (a, b) = (parse(saved), parse(current));
    for (x, y) in a.iter().zip(&b) {
        if x != y {
            return Err(Error::Config { key: y.0.clone(), reason: format!("checkpoint was trained with {:?}, now {:?}", x.1, y.1) });
        }
    }
    if a.len() != b.len() {
        return Err(Error::Config { key: "--resume".into(), reason: "checkpoint config has a different key set".into() });
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Keeps the header and the rows whose first field is `<= keep`.
fn truncate_log(path: &Path, header: &str, keep: u64) -> Result<()> {
    let text = fs::read_to_string(path).unwrap_or_default();
    let mut out = format!("{header}\n");
    for line in text.lines().skip(1) {
        let first = line.split(',').next().and_then(|v| v.parse::<u64>().ok());
        if first.is_some_and(|v| v <= keep) {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn append(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().append(true).create(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Trains one fold into `dir`. With `resume`, continues from
/// `dir/last.ckpt` when it exists.
pub fn run_fold(
    cfg: &RunConfig,
    fold: usize,
    train: &[&Sample],
    val: &[&Sample],
    dir: &Path,
    resume: bool,
) -> Result<FoldOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::NoSamples(format!("fold {fold} has an empty training or validation set")));
    }
    let mut fold_cfg = cfg.clone();
    if !cfg.data.overfit {
        fold_cfg.data.fold = FoldSelect::One(fold);
    }
    let config_text = fold_cfg.to_text();
    let spec = cfg.model_spec();
    let mut model = Model::<f32>::build(&spec, cfg.optim.seed)?;
    let last_path = dir.join("last.ckpt");
    let best_path = dir.join("best.ckpt");
    let metrics_path = dir.join("metrics.csv");
    let losses_path = dir.join("losses.csv");
    fs::create_dir_all(dir)?;

    let mut state = TrainState::<f32>::new(cfg.optim.seed);
    if resume && last_path.exists() {
        let ck = load_checkpoint::<f32>(&last_path)?;
        check_resume_config(&ck.config, &config_text)?;
        ck.restore_params(&mut model.params)?;
        state = ck.state;
        truncate_log(&metrics_path, METRICS_HEADER, state.epoch)?;
        truncate_log(&losses_path, LOSSES_HEADER, state.step)?;
        log::info!("fold {fold}: resumed at step {} (epoch {})", state.step, state.epoch);
    } else {
        fs::write(&metrics_path, format!("{METRICS_HEADER}\n"))?;
        fs::write(&losses_path, format!("{LOSSES_HEADER}\n"))?;
    }
    fs::write(dir.join("config.resolved"), &config_text)?;

    let mut losses = Vec::new();
    let mut last = Prf::default();
    let (n, bs) = (train.len(), cfg.optim.batch_size);
    while state.step < cfg.optim.steps {
        let idx = state.next_batch(n, bs);
        let batch = if cfg.data.augment {
            let aug: Vec<Sample> = idx.iter().map(|&i| augment(train[i], &mut state.rng)).collect();
            Batch::from_samples(&aug)?
        } else {
            Batch::from_samples(idx.iter().map(|&i| train[i]))?
        };
        let loss = train_step(&mut model, &mut state, &batch, &cfg.optim, &cfg.loss)?;
        append(&losses_path, &format!("{},{loss:.9e}", state.step))?;
        losses.push(loss);
        let epoch_end = state.epoch_finished();
        let final_step = state.step == cfg.optim.steps;
        if !(epoch_end || final_step) {
            continue;
        }
        let label = state.epoch + 1;
        if epoch_end {
            state.epoch += 1;
        }
        let mean_loss = state.stats.close_epoch();
        if label % cfg.train.eval_every as u64 == 0 || final_step {
            let per_image = evaluate(&model, val, cfg.train.threshold, bs)?;
            let counts: ConfusionCounts = per_image.iter().map(|m| m.counts).sum();
            last = precision_recall_f1(&counts);
            append(
                &metrics_path,
                &format!("{label},{fold},{mean_loss:.6},{},{},{}", fmt_opt(last.precision), fmt_opt(last.recall), fmt_opt(last.f1)),
            )?;
            log::info!("fold {fold} epoch {label} step {}: loss {mean_loss:.4} f1 {}", state.step, fmt_opt(last.f1));
            if let Some(f1) = last.f1 {
                if state.best_f1.is_none_or(|b| f1 > b) {
                    state.best_f1 = Some(f1);
                    save_checkpoint(&best_path, &config_text, &model.params, &state)?;
                }
            }
        }
        save_checkpoint(&last_path, &config_text, &model.params, &state)?;
    }
    if !best_path.exists() {
        save_checkpoint(&best_path, &config_text, &model.params, &state)?;
    }
    Ok(FoldOutcome { fold, dir: dir.to_path_buf(), steps: state.step, best_f1: state.best_f1, last, losses })
}

/// The fold plan for `samples` under `cfg`. Overfit runs use one fold that
/// validates on its own training set.
pub fn plan_for(cfg: &RunConfig, samples: &[Sample]) -> Result<Option<FoldPlan>> {
    if cfg.data.overfit {
        return Ok(None);
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let plan = make_folds(&ids, cfg.data.folds, cfg.data.split_seed)?;
    plan.validate(&ids)?;
    Ok(Some(plan))
}

/// Runs the configured folds under `cfg.out_dir`.
pub fn run_training(cfg: &RunConfig, samples: &[Sample], resume: bool) -> Result<Vec<FoldOutcome>> {
    if samples.is_empty() {
        return Err(Error::NoSamples("no prepared samples".into()));
    }
    let all: Vec<&Sample> = samples.iter().collect();
    let Some(plan) = plan_for(cfg, samples)? else {
        return Ok(vec![run_fold(cfg, 0, &all, &all, &fold_dir(&cfg.out_dir, 0), resume)?]);
    };
    let folds: Vec<usize> = match cfg.data.fold {
        FoldSelect::All => (0..plan.k).collect(),
        FoldSelect::One(k) => vec![k],
    };
    let by_id = |ids: &[String]| -> Result<Vec<&Sample>> {
        ids.iter()
            .map(|id| {
                samples
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| Error::FoldPlan(format!("id {id} does not resolve to a sample")))
            })
            .collect()
    };
    folds
        .into_iter()
        .map(|k| {
            let f = &plan.folds[k];
            run_fold(cfg, k, &by_id(&f.train)?, &by_id(&f.val)?, &fold_dir(&cfg.out_dir, k), resume)
        })
        .collect()
}
