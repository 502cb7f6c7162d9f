//! Annotation ingestion, mask rasterization, sample preparation, fold
//! planning and the synthetic dataset used by the acceptance runs.

mod cache;
mod coco;
mod folds;
mod raster;
mod sample;
pub mod synth;

pub use cache::{ingest, load_samples, manifest_path, read_manifest, IngestReport, Manifest, ManifestEntry, MANIFEST_FILE};
pub use coco::{AnnotationEntry, AnnotationSet, Category, ImageEntry};
pub use folds::{make_folds, Fold, FoldPlan};
pub use raster::{rasterize_polygon, rasterize_polygons};
pub use sample::{augment, decode_gray, prepare_sample, Sample, DEFAULT_SIZE};
