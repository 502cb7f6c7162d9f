//! COCO-style annotation documents (polygon segmentations only).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// Flat `[x0, y0, x1, y1, ...]` polygons in pixel units.
    pub segmentation: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

/// A validated annotation document. Immutable after loading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<AnnotationEntry>,
    #[serde(default)]
    pub categories: Vec<Category>,
}

impl AnnotationSet {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses and validates. Polygon coordinates are clamped to the image.
    pub fn parse(text: &str) -> Result<Self> {
        let mut set: AnnotationSet = serde_json::from_str(text).map_err(|e| Error::AnnotationParse(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    fn validate(&mut self) -> Result<()> {
        let mut dims = BTreeMap::new();
        for img in &self.images {
            if dims.insert(img.id, (img.width as f64, img.height as f64)).is_some() {
                return Err(Error::AnnotationParse(format!("duplicate image id {}", img.id)));
            }
            if img.width == 0 || img.height == 0 {
                return Err(Error::AnnotationParse(format!("image {} has zero extent", img.id)));
            }
        }
        let mut seen = HashSet::new();
        for ann in &mut self.annotations {
            if !seen.insert(ann.id) {
                return Err(Error::AnnotationParse(format!("duplicate annotation id {}", ann.id)));
            }
            let &(w, h) = dims
                .get(&ann.image_id)
                .ok_or(Error::DanglingImage { annotation: ann.id, image_id: ann.image_id })?;
            for poly in &mut ann.segmentation {
                if poly.len() % 2 != 0 || poly.len() < 6 {
                    return Err(Error::BadPolygon { annotation: ann.id, len: poly.len() });
                }
                if poly.iter().any(|v| !v.is_finite()) {
                    return Err(Error::AnnotationParse(format!("annotation {} has a non-finite coordinate", ann.id)));
                }
                for xy in poly.chunks_exact_mut(2) {
                    xy[0] = xy[0].clamp(0.0, w);
                    xy[1] = xy[1].clamp(0.0, h);
                }
            }
        }
        Ok(())
    }

    /// `(images, annotations)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.images.len(), self.annotations.len())
    }

    pub fn image(&self, id: u64) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    /// All polygons for an image. Every category collapses to foreground.
    pub fn polygons_for(&self, image_id: u64) -> Vec<&[f64]> {
        self.annotations
            .iter()
            .filter(|a| a.image_id == image_id)
            .flat_map(|a| a.segmentation.iter().map(Vec::as_slice))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "images": [{"id": 1, "file_name": "a.png", "width": 8, "height": 8}],
        "annotations": [{"id": 5, "image_id": 1, "category_id": 1, "segmentation": [[0, 0, 12, 0, 0, 6]]}],
        "categories": [{"id": 1, "name": "stenosis"}]
    }"#;

    #[test]
    fn loads_and_clamps() {
        let s = AnnotationSet::parse(DOC).unwrap();
        assert_eq!(s.counts(), (1, 1));
        assert_eq!(s.polygons_for(1)[0][2], 8.0);
    }

    #[test]
    fn error_kinds_are_distinct() {
        let dangling = DOC.replace("\"image_id\": 1", "\"image_id\": 42");
        match AnnotationSet::parse(&dangling) {
            Err(Error::DanglingImage { image_id: 42, .. }) => {}
            other => panic!("{other:?}"),
        }
        let odd = DOC.replace("[[0, 0, 12, 0, 0, 6]]", "[[0, 0, 12, 0, 0]]");
        assert!(matches!(AnnotationSet::parse(&odd), Err(Error::BadPolygon { len: 5, .. })));
        assert!(matches!(AnnotationSet::parse("{"), Err(Error::AnnotationParse(_))));
    }
}
