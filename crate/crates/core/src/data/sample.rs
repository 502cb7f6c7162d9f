//! Decoding, intensity scaling and resizing of one image plus its mask.

use std::path::{Path, PathBuf};

use image::{imageops, DynamicImage, ImageBuffer, Luma};
use rand::Rng;

use super::raster::rasterize_polygons;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

pub const DEFAULT_SIZE: usize = 512;

/// A prepared training example: `image` is `[1, S, S]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: Mask,
    pub source: PathBuf,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.mask.height()
    }
}

type Gray = ImageBuffer<Luma<f32>, Vec<f32>>;

/// Decodes to grayscale intensities in `[0, 1]`, scaled by the stored bit depth.
pub fn decode_gray(path: &Path) -> Result<Gray> {
    let fail = |reason: String| Error::ImageDecode { path: path.to_path_buf(), reason };
    let img = image::ImageReader::open(path)
        .map_err(|e| fail(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| fail(e.to_string()))?
        .decode()
        .map_err(|e| fail(e.to_string()))?;
    Ok(to_gray(img))
}

fn to_gray(img: DynamicImage) -> Gray {
    let (w, h) = (img.width(), img.height());
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            img.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
        }
        other => other.to_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
    };
    ImageBuffer::from_raw(w, h, data).expect("buffer matches extent")
}

/// Builds a `size x size` sample. The image is resized bilinearly and the
/// mask, rasterized at native resolution from every polygon, by nearest
/// neighbour. No polygons is valid and gives an empty mask.
pub fn prepare_sample(id: &str, path: &Path, polygons: &[&[f64]], size: usize) -> Result<Sample> {
    let gray = decode_gray(path)?;
    Ok(prepare_from_gray(id, path, &gray, polygons, size))
}

pub(crate) fn prepare_from_gray(id: &str, path: &Path, gray: &Gray, polygons: &[&[f64]], size: usize) -> Sample {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mask = rasterize_polygons(polygons.iter().copied(), h, w);
    let (pixels, mask) = if (w, h) == (size, size) {
        (gray.as_raw().clone(), mask)
    } else {
        let resized = imageops::resize(gray, size as u32, size as u32, imageops::FilterType::Triangle);
        (resized.into_raw(), mask.resize_nearest(size, size))
    };
    let pixels = pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Sample {
        id: id.to_string(),
        image: Tensor::new([1, size, size], pixels).expect("extent matches"),
        mask,
        source: path.to_path_buf(),
    }
}

/// Random horizontal/vertical flips applied identically to image and mask.
pub fn augment(sample: &Sample, rng: &mut impl Rng) -> Sample {
    let (flip_h, flip_v) = (rng.gen::<bool>(), rng.gen::<bool>());
    let s = sample.size();
    let src = |r: usize, c: usize| {
        let r = if flip_v { s - 1 - r } else { r };
        let c = if flip_h { s - 1 - c } else { c };
        (r, c)
    };
    let img = sample.image.data();
    let pixels = (0..s * s)
        .map(|i| {
            let (r, c) = src(i / s, i % s);
            img[r * s + c]
        })
        .collect();
    Sample {
        id: sample.id.clone(),
        image: Tensor::new([1, s, s], pixels).expect("extent matches"),
        mask: Mask::from_fn(s, s, |r, c| {
            let (r, c) = src(r, c);
            sample.mask.get(r, c) != 0
        }),
        source: sample.source.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_white_scales_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.png");
        image::GrayImage::from_pixel(16, 16, Luma([255])).save(&path).unwrap();
        let s = prepare_sample("w", &path, &[], 16).unwrap();
        assert!(s.image.data().iter().all(|&v| v == 1.0));
        assert_eq!(s.mask.count_ones(), 0);
    }

    #[test]
    fn sixteen_bit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        ImageBuffer::<Luma<u16>, _>::from_pixel(4, 4, Luma([65535u16 / 5])).save(&path).unwrap();
        let s = prepare_sample("g", &path, &[], 4).unwrap();
        assert!((s.image.data()[0] - 0.2).abs() < 1e-4);
    }

    #[test]
    fn undecodable_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        std::fs::write(&path, b"not an image").unwrap();
        assert!(matches!(prepare_sample("x", &path, &[], 4), Err(Error::ImageDecode { .. })));
    }
}
