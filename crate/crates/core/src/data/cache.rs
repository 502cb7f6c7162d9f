//! On-disk cache of prepared samples: one TNSR1 file per image and per mask,
//! indexed by a JSON manifest carrying SHA-256 digests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::coco::AnnotationSet;
use super::sample::{prepare_sample, Sample};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "stenoseg-cache-1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source: String,
    pub image: String,
    pub mask: String,
    pub image_sha256: String,
    pub mask_sha256: String,
    pub foreground_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub size: usize,
    pub images: usize,
    pub annotations: usize,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestReport {
    pub manifest: Manifest,
    /// `(file name, reason)` for images that could not be prepared.
    pub failures: Vec<(String, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t)?;
    Ok(buf)
}

/// Prepares every image of `set` from `images_dir` and writes the cache to
/// `out`. Undecodable images are skipped and listed in the report.
pub fn ingest(set: &AnnotationSet, images_dir: &Path, out: &Path, size: usize) -> Result<IngestReport> {
    fs::create_dir_all(out)?;
    let mut images: Vec<_> = set.images.iter().collect();
    images.sort_by_key(|i| i.id);
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for img in images {
        let path = images_dir.join(&img.file_name);
        let polys = set.polygons_for(img.id);
        let sample = match prepare_sample(&img.id.to_string(), &path, &polys, size) {
            Ok(s) => s,
            Err(e @ Error::ImageDecode { .. }) => {
                log::warn!("{e}");
                failures.push((img.file_name.clone(), e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let (image_file, mask_file) = (format!("{}.image.tnsr", sample.id), format!("{}.mask.tnsr", sample.id));
        let image_bytes = encode(&sample.image)?;
        let mask_bytes = encode(&sample.mask.to_tensor())?;
        fs::write(out.join(&image_file), &image_bytes)?;
        fs::write(out.join(&mask_file), &mask_bytes)?;
        entries.push(ManifestEntry {
            id: sample.id,
            source: img.file_name.clone(),
            image: image_file,
            mask: mask_file,
            image_sha256: sha256_hex(&image_bytes),
            mask_sha256: sha256_hex(&mask_bytes),
            foreground_pixels: sample.mask.count_ones(),
        });
    }
    let (n_images, n_annotations) = set.counts();
    let manifest =
        Manifest { format: MANIFEST_FORMAT.into(), size, images: n_images, annotations: n_annotations, entries };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(IngestReport { manifest, failures })
}

/// Accepts a cache directory or a manifest path.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let path = manifest_path(path);
    let m: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if m.format != MANIFEST_FORMAT {
        return Err(Error::Version { expected: MANIFEST_FORMAT.into(), found: m.format });
    }
    Ok(m)
}

/// Loads every cached sample, verifying digests.
pub fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    let manifest_file = manifest_path(path);
    let dir = manifest_file.parent().unwrap_or(Path::new("."));
    let manifest = read_manifest(&manifest_file)?;
    let read = |name: &str, digest: &str| -> Result<Tensor<f32>> {
        let bytes = fs::read(dir.join(name))?;
        if sha256_hex(&bytes) != digest {
            return Err(Error::Format(format!("digest mismatch for cached file {name}")));
        }
        read_tensor(&mut bytes.as_slice())
    };
    manifest
        .entries
        .iter()
        .map(|e| {
            let image = read(&e.image, &e.image_sha256)?;
            let mask = Mask::from_tensor(&read(&e.mask, &e.mask_sha256)?)?;
            if image.shape() != [1, manifest.size, manifest.size] || mask.dims() != (manifest.size, manifest.size) {
                return Err(Error::Format(format!("cached sample {} does not match size {}", e.id, manifest.size)));
            }
            Ok(Sample { id: e.id.clone(), image, mask, source: e.source.clone().into() })
        })
        .collect()
}
