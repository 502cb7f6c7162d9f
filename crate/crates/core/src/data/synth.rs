//! Synthetic angiogram-like images with convex blob lesions whose masks are
//! known analytically.

use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::coco::{AnnotationEntry, AnnotationSet, Category, ImageEntry};
use super::raster::rasterize_polygon;
use super::sample::Sample;
use crate::error::Result;
use crate::mask::Mask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub max_blobs: usize,
}

impl SynthConfig {
    pub fn new(count: usize, size: usize, seed: u64) -> Self {
        Self { count, size, seed, max_blobs: 3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub id: u64,
    pub pixels: Vec<u8>,
    pub polygons: Vec<Vec<f64>>,
    /// Union of the analytic half-plane masks.
    pub mask: Mask,
}

/// Centres strictly inside every edge half-plane of a convex polygon.
pub fn convex_mask(poly: &[f64], height: usize, width: usize) -> Mask {
    let n = poly.len() / 2;
    let orient = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            poly[2 * i] * poly[2 * j + 1] - poly[2 * j] * poly[2 * i + 1]
        })
        .sum::<f64>()
        .signum();
    Mask::from_fn(height, width, |r, c| {
        let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
        (0..n).all(|i| {
            let j = (i + 1) % n;
            let (ex, ey) = (poly[2 * j] - poly[2 * i], poly[2 * j + 1] - poly[2 * i + 1]);
            orient * (ex * (y - poly[2 * i + 1]) - ey * (x - poly[2 * i])) > 0.0
        })
    })
}

/// Smallest distance from any pixel centre to any edge's supporting line.
fn centre_margin(poly: &[f64], size: usize) -> f64 {
    let n = poly.len() / 2;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let j = (i + 1) % n;
        let (x0, y0) = (poly[2 * i], poly[2 * i + 1]);
        let (ex, ey) = (poly[2 * j] - x0, poly[2 * j + 1] - y0);
        let len = ex.hypot(ey);
        for r in 0..size {
            for c in 0..size {
                let d = (ex * (r as f64 + 0.5 - y0) - ey * (c as f64 + 0.5 - x0)).abs() / len;
                best = best.min(d);
            }
        }
    }
    best
}

fn convex_blob(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let s = size as f64;
    loop {
        let (rx, ry) = (rng.gen_range(0.07..0.16) * s, rng.gen_range(0.07..0.16) * s);
        let cx = rng.gen_range(rx + 1.0..s - rx - 1.0);
        let cy = rng.gen_range(ry + 1.0..s - ry - 1.0);
        let k = rng.gen_range(5..=8);
        let mut angles: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let gaps_ok = angles.windows(2).all(|w| w[1] - w[0] > 0.2)
            && angles[0] + std::f64::consts::TAU - angles[k - 1] > 0.2
            && angles.windows(2).all(|w| w[1] - w[0] < 2.5)
            && angles[0] + std::f64::consts::TAU - angles[k - 1] < 2.5;
        if !gaps_ok {
            continue;
        }
        let poly: Vec<f64> = angles.iter().flat_map(|a| [cx + rx * a.cos(), cy + ry * a.sin()]).collect();
        // keep centres off the boundary so both fill rules agree exactly
        if centre_margin(&poly, size) > 1e-6 {
            return poly;
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Vec<SynthImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.size;
    (0..cfg.count)
        .map(|i| {
            let blobs = rng.gen_range(1..=cfg.max_blobs.max(1));
            let polygons: Vec<Vec<f64>> = (0..blobs).map(|_| convex_blob(&mut rng, n)).collect();
            let mut mask = Mask::zeros(n, n);
            for p in &polygons {
                mask.union_with(&convex_mask(p, n, n)).expect("same extent");
            }
            let (gx, gy) = (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
            // vessel-like distractors: bright thin bands that are not lesions
            let vessels: Vec<(f64, f64, f64)> = (0..2)
                .map(|_| {
                    let theta = rng.gen_range(0.0..std::f64::consts::PI);
                    (theta.cos(), theta.sin(), rng.gen_range(0.2..0.8) * n as f64)
                })
                .collect();
            let pixels = (0..n * n)
                .map(|k| {
                    let (r, c) = (k / n, k % n);
                    let (x, y) = (c as f64 + 0.5 - n as f64 / 2.0, r as f64 + 0.5 - n as f64 / 2.0);
                    let on_vessel = vessels.iter().any(|&(a, b, d)| (a * x + b * y + n as f64 / 2.0 - d).abs() < 1.0);
                    let base = if mask.get(r, c) == 1 {
                        200.0
                    } else if on_vessel {
                        150.0
                    } else {
                        50.0
                    };
                    let trend = gx * (c as f64 / n as f64 - 0.5) + gy * (r as f64 / n as f64 - 0.5);
                    (base + trend + rng.gen_range(-20.0..20.0)).round().clamp(0.0, 255.0) as u8
                })
                .collect();
            SynthImage { id: i as u64 + 1, pixels, polygons, mask }
        })
        .collect()
}

/// Checks that even-odd rasterization reproduces the analytic mask.
pub fn rasterization_agrees(img: &SynthImage, size: usize) -> bool {
    let mut raster = Mask::zeros(size, size);
    for p in &img.polygons {
        raster.union_with(&rasterize_polygon(p, size, size).0).expect("same extent");
    }
    raster == img.mask
}

fn file_name(id: u64) -> String {
    format!("synth_{id:04}.png")
}

/// In-memory samples identical to what ingesting [`write_dataset`] yields.
pub fn samples(cfg: &SynthConfig) -> Vec<Sample> {
    generate(cfg)
        .into_iter()
        .map(|img| Sample {
            id: img.id.to_string(),
            image: Tensor::new([1, cfg.size, cfg.size], img.pixels.iter().map(|&v| v as f32 / 255.0).collect())
                .expect("extent matches"),
            mask: img.mask,
            source: file_name(img.id).into(),
        })
        .collect()
}

/// Writes `images/*.png` and `annotations.json` under `dir`.
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> Result<AnnotationSet> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)?;
    let mut set = AnnotationSet {
        images: Vec::new(),
        annotations: Vec::new(),
        categories: vec![Category { id: 1, name: "stenosis".into() }],
    };
    let side = cfg.size as u32;
    for img in generate(cfg) {
        let name = file_name(img.id);
        let buf = GrayImage::from_fn(side, side, |x, y| Luma([img.pixels[(y * side + x) as usize]]));
        buf.save(images_dir.join(&name)).map_err(std::io::Error::other)?;
        set.images.push(ImageEntry { id: img.id, file_name: name, width: side, height: side });
        for poly in img.polygons {
            let id = set.annotations.len() as u64 + 1;
            set.annotations.push(AnnotationEntry { id, image_id: img.id, category_id: 1, segmentation: vec![poly] });
        }
    }
    std::fs::write(dir.join("annotations.json"), set.to_json()?)?;
    Ok(set)
}
