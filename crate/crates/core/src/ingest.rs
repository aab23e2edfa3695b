//! COCO-style annotation loading and raster alignment checks.
//!
//! Only the subset of COCO used here is read: `images[].{id,file_name,width,height}`
//! and `annotations[].{id,image_id,category_id,segmentation}` with polygon-encoded
//! segmentation. `category_id` is kept for audit output only.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
pub use crate::geometry::Polygon;
use crate::raster::{find_raster, read_dimensions};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

impl ImageRecord {
    /// File name without directory or extension; pairs the image with its raster and label file.
    pub fn stem(&self) -> String {
        file_stem(&self.file_name)
    }
}

pub(crate) fn file_stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: i64,
    pub parts: Vec<Polygon>,
}

/// Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    images: Vec<ImageRecord>,
    annotations: Vec<AnnotationRecord>,
    image_pos: HashMap<u64, usize>,
}

#[derive(Deserialize)]
struct RawDocument {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
struct RawImage {
    id: u64,
    file_name: String,
    width: u64,
    height: u64,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    #[serde(default)]
    category_id: i64,
    segmentation: Value,
}

pub fn load_dataset(path: &Path) -> Result<DatasetIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<DatasetIndex> {
    let raw: RawDocument =
        serde_json::from_str(text).map_err(|e| Error::MalformedDocument(e.to_string()))?;

    let mut images = Vec::with_capacity(raw.images.len());
    let mut image_pos = HashMap::with_capacity(raw.images.len());
    for img in raw.images {
        if img.width == 0 || img.height == 0 {
            return Err(Error::MalformedDocument(format!(
                "image {} has zero size {}x{}",
                img.id, img.width, img.height
            )));
        }
        if image_pos.insert(img.id, images.len()).is_some() {
            return Err(Error::MalformedDocument(format!(
                "duplicate image id {}",
                img.id
            )));
        }
        images.push(ImageRecord {
            id: img.id,
            file_name: img.file_name,
            width: img.width as usize,
            height: img.height as usize,
        });
    }

    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for ann in raw.annotations {
        if !image_pos.contains_key(&ann.image_id) {
            return Err(Error::DanglingReference {
                annotation_id: ann.id,
                image_id: ann.image_id,
            });
        }
        let parts = parse_segmentation(ann.id, &ann.segmentation)?;
        annotations.push(AnnotationRecord {
            id: ann.id,
            image_id: ann.image_id,
            category_id: ann.category_id,
            parts,
        });
    }

    Ok(DatasetIndex {
        images,
        annotations,
        image_pos,
    })
}

fn parse_segmentation(annotation_id: u64, seg: &Value) -> Result<Vec<Polygon>> {
    let parts = match seg {
        Value::Array(parts) => parts,
        Value::Object(_) => return Err(Error::UnsupportedSegmentation { annotation_id }),
        _ => {
            return Err(Error::MalformedDocument(format!(
                "annotation {annotation_id}: segmentation must be a list of polygons"
            )))
        }
    };
    if parts.is_empty() {
        return Err(Error::DegeneratePolygon(format!(
            "annotation {annotation_id} has no polygon parts"
        )));
    }
    parts
        .iter()
        .map(|part| {
            let coords = part
                .as_array()
                .ok_or_else(|| {
                    Error::MalformedDocument(format!(
                        "annotation {annotation_id}: polygon part is not a list"
                    ))
                })?
                .iter()
                .map(|v| {
                    v.as_f64().ok_or_else(|| {
                        Error::MalformedDocument(format!(
                            "annotation {annotation_id}: non-numeric vertex coordinate"
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if coords.len() % 2 != 0 {
                return Err(Error::MalformedDocument(format!(
                    "annotation {annotation_id}: odd vertex list length {}",
                    coords.len()
                )));
            }
            Polygon::from_flat(&coords).map_err(|_| {
                Error::DegeneratePolygon(format!(
                    "annotation {annotation_id}: part with {} vertices",
                    coords.len() / 2
                ))
            })
        })
        .collect()
}

impl DatasetIndex {
    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[AnnotationRecord] {
        &self.annotations
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.image_pos.get(&id).map(|&i| &self.images[i])
    }

    pub fn part_count(&self) -> usize {
        self.annotations.iter().map(|a| a.parts.len()).sum()
    }

    /// Annotations grouped by image id, each group in document order.
    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&AnnotationRecord>> {
        let mut out: BTreeMap<u64, Vec<&AnnotationRecord>> = BTreeMap::new();
        for a in &self.annotations {
            out.entry(a.image_id).or_default().push(a);
        }
        out
    }

    /// Serializes back to the COCO subset this loader reads.
    pub fn to_coco_json(&self) -> String {
        let images: Vec<Value> = self
            .images
            .iter()
            .map(|i| serde_json::to_value(i).expect("image record serializes"))
            .collect();
        let annotations: Vec<Value> = self
            .annotations
            .iter()
            .map(|a| {
                serde_json::json!({
                    "id": a.id,
                    "image_id": a.image_id,
                    "category_id": a.category_id,
                    "segmentation": a.parts.iter().map(Polygon::to_flat).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "images": images,
            "annotations": annotations,
        }))
        .expect("json serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AlignmentStatus {
    Aligned,
    Missing,
    DimensionMismatch { raster_width: usize, raster_height: usize },
    Unreadable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentEntry {
    pub image_id: u64,
    pub stem: String,
    #[serde(flatten)]
    pub status: AlignmentStatus,
    /// Annotations with a vertex outside `[0, W] x [0, H]`.
    pub out_of_bounds: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<AlignmentEntry>,
    /// Stems shared by more than one image; their label files would collide.
    pub duplicate_stems: Vec<String>,
}

impl ValidationReport {
    fn count(&self, pred: impl Fn(&AlignmentStatus) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.status)).count()
    }

    pub fn aligned(&self) -> usize {
        self.count(|s| matches!(s, AlignmentStatus::Aligned))
    }

    pub fn missing(&self) -> usize {
        self.count(|s| matches!(s, AlignmentStatus::Missing))
    }

    pub fn mismatched(&self) -> usize {
        self.count(|s| matches!(s, AlignmentStatus::DimensionMismatch { .. }))
    }

    pub fn unreadable(&self) -> usize {
        self.count(|s| matches!(s, AlignmentStatus::Unreadable { .. }))
    }

    /// No missing, mismatched or unreadable rasters and no stem collisions.
    pub fn is_clean(&self) -> bool {
        self.aligned() == self.entries.len() && self.duplicate_stems.is_empty()
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .entries
            .iter()
            .filter_map(|e| match &e.status {
                AlignmentStatus::Aligned => None,
                AlignmentStatus::Missing => Some(format!("{}: raster missing", e.stem)),
                AlignmentStatus::DimensionMismatch {
                    raster_width,
                    raster_height,
                } => Some(format!(
                    "{}: dimension mismatch (raster {}x{})",
                    e.stem, raster_width, raster_height
                )),
                AlignmentStatus::Unreadable { reason } => {
                    Some(format!("{}: unreadable raster ({reason})", e.stem))
                }
            })
            .collect();
        out.extend(
            self.duplicate_stems
                .iter()
                .map(|s| format!("{s}: stem shared by several images")),
        );
        out
    }
}

pub fn validate_alignment(index: &DatasetIndex, raster_dir: &Path) -> ValidationReport {
    let by_image = index.annotations_by_image();
    let mut stems: BTreeMap<String, usize> = BTreeMap::new();
    let entries = index
        .images
        .iter()
        .map(|img| {
            let stem = img.stem();
            *stems.entry(stem.clone()).or_default() += 1;
            let status = match find_raster(raster_dir, &stem) {
                None => AlignmentStatus::Missing,
                Some(path) => match read_dimensions(&path) {
                    Ok((w, h)) if (w, h) == (img.width, img.height) => AlignmentStatus::Aligned,
                    Ok((w, h)) => AlignmentStatus::DimensionMismatch {
                        raster_width: w,
                        raster_height: h,
                    },
                    Err(e) => AlignmentStatus::Unreadable {
                        reason: e.to_string(),
                    },
                },
            };
            let (w, h) = (img.width as f64, img.height as f64);
            let out_of_bounds = by_image
                .get(&img.id)
                .into_iter()
                .flatten()
                .filter(|a| {
                    a.parts.iter().flat_map(|p| p.vertices()).any(|v| {
                        !(0.0..=w).contains(&v.x) || !(0.0..=h).contains(&v.y)
                    })
                })
                .map(|a| a.id)
                .collect();
            AlignmentEntry {
                image_id: img.id,
                stem,
                status,
                out_of_bounds,
            }
        })
        .collect();
    ValidationReport {
        entries,
        duplicate_stems: stems
            .into_iter()
            .filter(|(_, n)| *n > 1)
            .map(|(s, _)| s)
            .collect(),
    }
}
