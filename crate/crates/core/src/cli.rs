//! Implementations of the command-line subcommands. Each validates its
//! inputs before touching the filesystem.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{self, load_samples, synth, AnnotationSet, Manifest, Sample};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::metrics::{aggregate, read_report_csv, write_report_csv, MetricsReport, ReportRow};
use crate::models::Model;
use crate::train::{self, load_checkpoint, plan_for, predict_logits, run_training, FoldOutcome};
use crate::tensor::Tensor;

/// Environment variable naming the default sample cache directory.
pub const CACHE_ENV: &str = "STENOSEG_CACHE";

/// Process exit status for an error: 1 usage/config, 2 data, 3 numeric.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => 3,
        Error::AnnotationParse(_)
        | Error::DanglingImage { .. }
        | Error::BadPolygon { .. }
        | Error::ImageDecode { .. }
        | Error::NoSamples(_)
        | Error::PartialIngest { .. } => 2,
        _ => 1,
    }
}

fn cache_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .ok_or_else(|| Error::Config { key: "data.manifest".into(), reason: format!("no cache given and {CACHE_ENV} is unset") })
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config { key: what.into(), reason: format!("{} does not exist", path.display()) })
    }
}

/// Prepares and caches every annotated image. Returns the manifest, or
/// [`Error::PartialIngest`] after writing the successful entries.
pub fn cmd_ingest(annotations: &Path, images: &Path, out: Option<&Path>, size: usize) -> Result<Manifest> {
    require(annotations, "--annotations")?;
    require(images, "--images")?;
    if size == 0 {
        return Err(Error::Config { key: "--size".into(), reason: "must be positive".into() });
    }
    let out = cache_dir(out)?;
    let set = AnnotationSet::load(annotations)?;
    let report = data::ingest(&set, images, &out, size)?;
    let (n_img, n_ann) = set.counts();
    log::info!("{n_img} images, {n_ann} annotations, {} cached, {} failed", report.manifest.entries.len(), report.failures.len());
    if !report.failures.is_empty() {
        for (file, reason) in &report.failures {
            log::error!("{file}: {reason}");
        }
        return Err(Error::PartialIngest { failed: report.failures.len(), total: n_img });
    }
    Ok(report.manifest)
}

/// Loads the run configuration with command-line overrides applied.
pub fn resolve_config(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.set("train.seed", &s.to_string())?;
    }
    if let Some(o) = out {
        cfg.out_dir = o.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checked(cfg: &RunConfig, manifest: Option<&Path>) -> Result<Vec<Sample>> {
    let dir = cache_dir(manifest.or(cfg.data.manifest.as_deref()))?;
    let samples = load_samples(&dir)?;
    if samples.is_empty() {
        return Err(Error::NoSamples(format!("{} lists no samples", dir.display())));
    }
    let size = samples[0].size();
    if size != cfg.data.size {
        return Err(Error::Config {
            key: "data.size".into(),
            reason: format!("config says {}, cache holds {size}x{size} samples", cfg.data.size),
        });
    }
    Ok(samples)
}

pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<Vec<FoldOutcome>> {
    let samples = load_checked(cfg, None)?;
    plan_for(cfg, &samples)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.resolved"), cfg.to_text())?;
    run_training(cfg, &samples, resume)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    All,
    Train,
    Val,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Split::All),
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::Config { key: "--split".into(), reason: format!("{s:?}: expected all, train or val") }),
        }
    }
}

/// Rebuilds the model stored in a checkpoint.
pub fn load_model(checkpoint: &Path) -> Result<(RunConfig, Model<f32>)> {
    let ck = load_checkpoint::<f32>(checkpoint)?;
    let cfg = RunConfig::parse(&ck.config)?;
    let mut model = Model::build(&cfg.model_spec(), cfg.optim.seed)?;
    ck.restore_params(&mut model.params)?;
    Ok((cfg, model))
}

fn split_samples<'a>(cfg: &RunConfig, samples: &'a [Sample], split: Split) -> Result<Vec<&'a Sample>> {
    let plan = match (split, plan_for(cfg, samples)?) {
        (Split::All, _) | (_, None) => return Ok(samples.iter().collect()),
        (_, Some(p)) => p,
    };
    let fold = match cfg.data.fold {
        crate::config::FoldSelect::One(k) => k,
        crate::config::FoldSelect::All => 0,
    };
    let ids = match split {
        Split::Train => &plan.folds[fold].train,
        _ => &plan.folds[fold].val,
    };
    Ok(samples.iter().filter(|s| ids.contains(&s.id)).collect())
}

#[derive(Serialize)]
struct ImageLine<'a> {
    id: &'a str,
    tp: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    tn: u64,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
}

/// Evaluates a checkpoint and writes `metrics.csv` and `per_image.jsonl`
/// under `out`.
pub fn cmd_eval(checkpoint: &Path, manifest: Option<&Path>, split: Split, out: &Path) -> Result<MetricsReport> {
    let (cfg, model) = load_model(checkpoint)?;
    let samples = load_checked(&cfg, manifest)?;
    let chosen = split_samples(&cfg, &samples, split)?;
    if chosen.is_empty() {
        return Err(Error::NoSamples(format!("split {split:?} is empty")));
    }
    let per_image = train::evaluate(&model, &chosen, cfg.train.threshold, cfg.optim.batch_size)?;
    let report = aggregate(cfg.model.variant.display_name(), model.count_params() as u64, per_image)?;
    fs::create_dir_all(out)?;
    let mut csv = Vec::new();
    write_report_csv(&mut csv, &[ReportRow::from(&report)])?;
    fs::write(out.join("metrics.csv"), csv)?;
    let mut lines = String::new();
    for m in &report.per_image {
        let line = ImageLine {
            id: &m.id,
            tp: m.counts.tp,
            fp: m.counts.fp,
            fn_: m.counts.fn_,
            tn: m.counts.tn,
            precision: m.metrics.precision,
            recall: m.metrics.recall,
            f1: m.metrics.f1,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    fs::write(out.join("per_image.jsonl"), lines)?;
    Ok(report)
}

/// Predicts a binary mask for one image, written at the input resolution
/// (PNG or PGM by extension). `probs` optionally receives the foreground
/// probability map as 8-bit grayscale.
pub fn cmd_predict(checkpoint: &Path, image: &Path, out: &Path, probs: Option<&Path>) -> Result<Mask> {
    let (cfg, model) = load_model(checkpoint)?;
    let gray = data::decode_gray(image)?;
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let size = cfg.data.size;
    let sample = data::prepare_sample("predict", image, &[], size)?;
    let batch = Tensor::new([1, 1, size, size], sample.image.data().to_vec())?;
    let logits = train::split_batch(&predict_logits(&model, &batch)?).remove(0);
    let mask = crate::metrics::thresholded_mask(&logits, cfg.train.threshold)?.resize_nearest(h, w);
    let save = |img: GrayImage, path: &Path| -> Result<()> {
        img.save(path).map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
    };
    save(GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([mask.get(y as usize, x as usize) * 255])), out)?;
    if let Some(p) = probs {
        let plane = size * size;
        let d = logits.data();
        let fg: Vec<u8> = (0..plane)
            .map(|i| {
                let z: f64 = (0..logits.shape()[0]).map(|k| (d[k * plane + i] as f64 - d[i] as f64).exp()).sum();
                ((1.0 - 1.0 / z) * 255.0).round() as u8
            })
            .collect();
        let small: GrayImage = ImageBuffer::from_raw(size as u32, size as u32, fg).expect("extent matches");
        save(image::imageops::resize(&small, w as u32, h as u32, image::imageops::FilterType::Nearest), p)?;
    }
    Ok(mask)
}

pub const BUBBLE_MAX_RADIUS: f64 = 40.0;

/// Bubble radius, proportional to the square root of the parameter count.
pub fn bubble_radius(params: u64, max_params: u64) -> f64 {
    if max_params == 0 {
        0.0
    } else {
        BUBBLE_MAX_RADIUS * (params as f64 / max_params as f64).sqrt()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Bubble chart: rows in ascending F1 along x, y = F1, radius ∝ √params.
/// Rows without an F1 are omitted.
pub fn bubble_svg(rows: &[ReportRow]) -> String {
    let mut plotted: Vec<&ReportRow> = rows.iter().filter(|r| r.f1.is_some()).collect();
    plotted.sort_by(|a, b| a.f1.partial_cmp(&b.f1).expect("finite F1"));
    let (w, h, margin) = (120.0 * plotted.len().max(1) as f64 + 120.0, 480.0, 60.0);
    let max_params = plotted.iter().map(|r| r.params).max().unwrap_or(0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <line x1=\"{margin}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"15\" y=\"{mid}\" transform=\"rotate(-90 15 {mid})\" text-anchor=\"middle\">F1</text>\n",
        b = h - margin,
        r = w - margin / 2.0,
        mid = h / 2.0,
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = h - margin - v * (h - 2.0 * margin);
        svg.push_str(&format!("<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\">{v:.2}</text>\n", margin - 6.0));
    }
    for (i, row) in plotted.iter().enumerate() {
        let f1 = row.f1.expect("filtered");
        let cx = margin + 120.0 * (i as f64 + 1.0);
        let cy = h - margin - f1 * (h - 2.0 * margin);
        let r = bubble_radius(row.params, max_params);
        let name = xml_escape(&row.model);
        svg.push_str(&format!(
            "<circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"{r:.4}\" fill=\"steelblue\" fill-opacity=\"0.5\" data-model=\"{name}\" data-params=\"{}\" data-f1=\"{f1:.6}\"/>\n\
             <text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{name}</text>\n",
            row.params,
            h - margin + 20.0,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Merges report CSVs into `combined.csv` (descending F1, undefined last)
/// and `chart.svg`.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<Vec<ReportRow>> {
    if inputs.is_empty() {
        return Err(Error::Config { key: "report".into(), reason: "no input CSVs".into() });
    }
    let mut rows = Vec::new();
    for p in inputs {
        require(p, "report input")?;
        let f = std::io::BufReader::new(fs::File::open(p)?);
        rows.extend(read_report_csv(f).map_err(|e| Error::Schema(format!("{}: {e}", p.display())))?);
    }
    rows.sort_by(|a, b| match (a.f1, b.f1) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    fs::create_dir_all(out)?;
    let mut csv = Vec::new();
    write_report_csv(&mut csv, &rows)?;
    fs::write(out.join("combined.csv"), csv)?;
    fs::write(out.join("chart.svg"), bubble_svg(&rows))?;
    Ok(rows)
}

/// Writes a synthetic COCO-style dataset.
pub fn cmd_synth(out: &Path, count: usize, size: usize, seed: u64) -> Result<AnnotationSet> {
    if count == 0 || size < 8 {
        return Err(Error::Config { key: "synth".into(), reason: format!("count {count} / size {size} too small") });
    }
    synth::write_dataset(&synth::SynthConfig::new(count, size, seed), out)
}
