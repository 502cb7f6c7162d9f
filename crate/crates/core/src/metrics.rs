//! Pixel-level confusion counts, precision/recall/F1, micro aggregation and
//! the Table-style CSV report.

use std::io::{BufRead, Write};
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::{Real, Tensor};

pub const REPORT_HEADER: [&str; 5] = ["model", "params", "precision", "recall", "f1"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

pub fn confusion(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape("confusion", format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims())));
    }
    if !pred.is_binary() || !gt.is_binary() {
        return Err(Error::InvalidArgument("confusion needs binary masks".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Precision, recall and F1; `None` marks a zero denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall, undefined when both are zero.
pub fn f1_from_pr(p: f64, r: f64) -> Option<f64> {
    (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
}

pub fn precision_recall_f1(c: &ConfusionCounts) -> Prf {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => f1_from_pr(p, r),
        _ => None,
    };
    Prf { precision, recall, f1 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub counts: ConfusionCounts,
    pub metrics: Prf,
}

impl ImageMetrics {
    pub fn new(id: impl Into<String>, counts: ConfusionCounts) -> Self {
        Self { id: id.into(), counts, metrics: precision_recall_f1(&counts) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub params: u64,
    pub per_image: Vec<ImageMetrics>,
    pub counts: ConfusionCounts,
    pub metrics: Prf,
}

/// Micro average: counts are summed over images before deriving P/R/F1.
pub fn aggregate(model: impl Into<String>, params: u64, per_image: Vec<ImageMetrics>) -> Result<MetricsReport> {
    if per_image.is_empty() {
        return Err(Error::NoSamples("aggregate over zero images".into()));
    }
    let counts: ConfusionCounts = per_image.iter().map(|m| m.counts).sum();
    Ok(MetricsReport { model: model.into(), params, metrics: precision_recall_f1(&counts), counts, per_image })
}

/// Per-image mean of each metric over images where it is defined.
pub fn macro_average(per_image: &[ImageMetrics]) -> Prf {
    let mean = |f: fn(&Prf) -> Option<f64>| {
        let v: Vec<f64> = per_image.iter().filter_map(|m| f(&m.metrics)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Prf { precision: mean(|m| m.precision), recall: mean(|m| m.recall), f1: mean(|m| m.f1) }
}

/// Foreground where the foreground probability `1 - softmax(logits)[0]`
/// is `>= tau`; `logits` is `[C, H, W]`. Equal logits count as foreground
/// at `tau = 0.5`.
pub fn thresholded_mask<T: Real>(logits: &Tensor<T>, tau: f64) -> Result<Mask> {
    let (c, h, w) = match logits.shape() {
        [c, h, w] if *c >= 2 => (*c, *h, *w),
        s => return Err(Error::shape("thresholded_mask", format!("expected [C>=2, H, W], got {s:?}"))),
    };
    let d = logits.data();
    let plane = h * w;
    if tau <= 0.0 {
        return Ok(Mask::new(h, w, vec![1; plane])?);
    }
    if tau > 1.0 {
        return Ok(Mask::zeros(h, w));
    }
    let data = (0..plane)
        .map(|i| {
            let fg = if c == 2 {
                // p1 >= tau  <=>  l1 - l0 >= logit(tau), exact at ties
                let margin = d[plane + i].f64() - d[i].f64();
                margin >= (tau / (1.0 - tau)).ln()
            } else {
                let l0 = d[i].f64();
                let z: f64 = (0..c).map(|k| (d[k * plane + i].f64() - l0).exp()).sum();
                1.0 - 1.0 / z >= tau
            };
            fg as u8
        })
        .collect();
    Mask::new(h, w, data)
}

/// Per-pixel argmax over classes, ties resolved towards foreground, then
/// collapsed to foreground/background.
pub fn argmax_mask<T: Real>(logits: &Tensor<T>) -> Result<Mask> {
    let (c, h, w) = match logits.shape() {
        [c, h, w] if *c >= 2 => (*c, *h, *w),
        s => return Err(Error::shape("argmax_mask", format!("expected [C>=2, H, W], got {s:?}"))),
    };
    let d = logits.data();
    let plane = h * w;
    let data = (0..plane).map(|i| (1..c).any(|k| d[k * plane + i] >= d[i]) as u8).collect();
    Mask::new(h, w, data)
}

/// One row of the report CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub params: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl From<&MetricsReport> for ReportRow {
    fn from(r: &MetricsReport) -> Self {
        Self {
            model: r.model.clone(),
            params: r.params,
            precision: r.metrics.precision,
            recall: r.metrics.recall,
            f1: r.metrics.f1,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes `model,params,precision,recall,f1`; undefined values are empty.
pub fn write_report_csv<W: Write>(mut w: W, rows: &[ReportRow]) -> Result<()> {
    writeln!(w, "{}", REPORT_HEADER.join(","))?;
    for r in rows {
        if r.model.contains(',') || r.model.contains('\n') {
            return Err(Error::Schema(format!("model name {:?} cannot be written to CSV", r.model)));
        }
        writeln!(w, "{},{},{},{},{}", r.model, r.params, fmt_opt(r.precision), fmt_opt(r.recall), fmt_opt(r.f1))?;
    }
    Ok(())
}

pub fn read_report_csv<R: BufRead>(r: R) -> Result<Vec<ReportRow>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Schema("empty report".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    for (i, want) in REPORT_HEADER.iter().enumerate() {
        match cols.get(i) {
            Some(c) if c == want => {}
            Some(c) => return Err(Error::Schema(format!("column {} is {c:?}, expected {want:?}", i + 1))),
            None => return Err(Error::Schema(format!("missing column {want:?}"))),
        }
    }
    if cols.len() > REPORT_HEADER.len() {
        return Err(Error::Schema(format!("unexpected column {:?}", cols[REPORT_HEADER.len()])));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != REPORT_HEADER.len() {
            return Err(Error::Schema(format!("row {} has {} fields", n + 2, f.len())));
        }
        let num = |i: usize| -> Result<Option<f64>> {
            if f[i].is_empty() {
                return Ok(None);
            }
            f[i].parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Schema(format!("row {} column {:?}: {:?} is not a number", n + 2, REPORT_HEADER[i], f[i])))
        };
        let params = f[1]
            .parse::<u64>()
            .map_err(|_| Error::Schema(format!("row {} column \"params\": {:?} is not an integer", n + 2, f[1])))?;
        rows.push(ReportRow { model: f[0].to_string(), params, precision: num(2)?, recall: num(3)?, f1: num(4)? });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_empty_is_undefined() {
        let z = Mask::zeros(3, 3);
        let m = precision_recall_f1(&confusion(&z, &z).unwrap());
        assert_eq!(m, Prf::default());
    }

    #[test]
    fn micro_example() {
        let a = ImageMetrics::new("a", ConfusionCounts { tp: 1, fp: 0, fn_: 1, tn: 0 });
        let b = ImageMetrics::new("b", ConfusionCounts { tp: 1, fp: 1, fn_: 0, tn: 0 });
        let r = aggregate("m", 0, vec![a, b]).unwrap();
        for v in [r.metrics.precision, r.metrics.recall, r.metrics.f1] {
            assert!((v.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn threshold_ties_are_foreground() {
        let t = Tensor::<f32>::zeros(vec![2, 1, 1]);
        assert_eq!(thresholded_mask(&t, 0.5).unwrap().count_ones(), 1);
        assert_eq!(thresholded_mask(&t, 0.0).unwrap().count_ones(), 1);
        assert_eq!(thresholded_mask(&t, 1.5).unwrap().count_ones(), 0);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![ReportRow { model: "x".into(), params: 5, precision: Some(0.5), recall: None, f1: None }];
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_report_csv(&buf[..]).unwrap(), rows);
        let bad = b"model,params,precision,recal,f1\n";
        let e = read_report_csv(&bad[..]).unwrap_err().to_string();
        assert!(e.contains("recal"), "{e}");
    }
}
