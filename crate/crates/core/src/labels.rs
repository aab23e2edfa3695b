//! YOLO segmentation label files and the end-to-end dataset conversion.
//!
//! One line per instance: `<class> <x1> <y1> ... <xn> <yn>` with a 0-based class
//! index and normalized coordinates at 6 decimals. Prediction files append the
//! confidence as a final token.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{normalize, polygon_area, NormalizedPolygon, Point, Polygon};
use crate::heightclass::{estimate_instance, HeightClass, NUM_CLASSES};
use crate::ingest::{validate_alignment, AnnotationRecord, DatasetIndex, ImageRecord};
use crate::par::Exec;
use crate::raster::{find_raster, read_raster, HeightRaster};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    GroundTruth,
    Prediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YoloInstance {
    pub class_index: u8,
    pub polygon: NormalizedPolygon,
    pub confidence: Option<f64>,
}

impl YoloInstance {
    pub fn ground_truth(class: HeightClass, polygon: NormalizedPolygon) -> Self {
        YoloInstance {
            class_index: class.index() as u8,
            polygon,
            confidence: None,
        }
    }

    pub fn class(&self) -> HeightClass {
        HeightClass::from_index(self.class_index as usize).expect("validated class index")
    }

    pub fn kind(&self) -> LabelKind {
        if self.confidence.is_some() {
            LabelKind::Prediction
        } else {
            LabelKind::GroundTruth
        }
    }

    fn validate(&self) -> Result<()> {
        if self.class_index as usize >= NUM_CLASSES {
            return Err(Error::InvalidInstance(format!(
                "class index {}",
                self.class_index
            )));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidInstance(format!("confidence {c}")));
            }
        }
        Ok(())
    }
}

/// Renders one label line (without the newline).
pub fn format_line(inst: &YoloInstance) -> String {
    let mut s = inst.class_index.to_string();
    for p in inst.polygon.vertices() {
        let _ = write!(s, " {:.6} {:.6}", p.x, p.y);
    }
    if let Some(c) = inst.confidence {
        let _ = write!(s, " {c:.6}");
    }
    s
}

pub fn format_labels(instances: &[YoloInstance]) -> Result<String> {
    if let Some(first) = instances.first() {
        if instances.iter().any(|i| i.kind() != first.kind()) {
            return Err(Error::MixedKinds);
        }
    }
    let mut out = String::new();
    for inst in instances {
        inst.validate()?;
        out.push_str(&format_line(inst));
        out.push('\n');
    }
    Ok(out)
}

/// Writes via a temporary file in the target directory, then renames into place.
pub fn write_label_file(instances: &[YoloInstance], path: &Path) -> Result<()> {
    let text = format_labels(instances)?;
    write_atomic(path, text.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn parse_label_file(path: &Path, kind: LabelKind) -> Result<Vec<YoloInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, kind, path)
}

/// `origin` is only used for error context.
pub fn parse_labels(text: &str, kind: LabelKind, origin: &Path) -> Result<Vec<YoloInstance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let ctx = |message: String| Error::TokenCountMismatch {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        // class + >=3 pairs, plus a trailing confidence for predictions
        let (coord_toks, conf_tok) = match kind {
            LabelKind::GroundTruth => {
                if toks.len() < 7 || toks.len().is_multiple_of(2) {
                    return Err(ctx(format!(
                        "ground-truth line needs an odd token count >= 7, got {}",
                        toks.len()
                    )));
                }
                (&toks[1..], None)
            }
            LabelKind::Prediction => {
                if toks.len() < 8 || !toks.len().is_multiple_of(2) {
                    return Err(ctx(format!(
                        "prediction line needs an even token count >= 8, got {}",
                        toks.len()
                    )));
                }
                (&toks[1..toks.len() - 1], Some(toks[toks.len() - 1]))
            }
        };

        let class_index = toks[0]
            .parse::<u8>()
            .ok()
            .filter(|&c| (c as usize) < NUM_CLASSES)
            .ok_or_else(|| Error::OutOfRangeClass {
                path: origin.to_path_buf(),
                line: line_no,
                value: toks[0].to_owned(),
            })?;

        let unit = |tok: &str| -> Option<f64> {
            tok.parse::<f64>().ok().filter(|v| (0.0..=1.0).contains(v))
        };
        let mut coords = Vec::with_capacity(coord_toks.len());
        for tok in coord_toks {
            coords.push(unit(tok).ok_or_else(|| Error::OutOfRangeCoordinate {
                path: origin.to_path_buf(),
                line: line_no,
                value: (*tok).to_owned(),
            })?);
        }
        let confidence = conf_tok
            .map(|tok| {
                unit(tok).ok_or_else(|| Error::OutOfRangeConfidence {
                    path: origin.to_path_buf(),
                    line: line_no,
                    value: tok.to_owned(),
                })
            })
            .transpose()?;
        let polygon = NormalizedPolygon::new(
            coords
                .chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
        )?;
        out.push(YoloInstance {
            class_index,
            polygon,
            confidence,
        });
    }
    Ok(out)
}

/// Deterministic train/validation assignment by hashed image stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub seed: u64,
    /// Percentage of images routed to validation, `1..=99`.
    pub val_percent: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            val_percent: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
}

impl Subset {
    pub fn dir_name(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

impl SplitSpec {
    /// `val_fraction` is rounded to whole percent.
    pub fn from_fraction(seed: u64, val_fraction: f64) -> Result<Self> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::DomainError(format!(
                "validation fraction {val_fraction} not in (0, 1)"
            )));
        }
        let val_percent = (val_fraction * 100.0).round().clamp(1.0, 99.0) as u64;
        Ok(SplitSpec { seed, val_percent })
    }

    /// Hashes `<stem><seed as decimal>`; validation iff `hash % 100 < val_percent`.
    pub fn assign(&self, stem: &str) -> Subset {
        let key = format!("{stem}{}", self.seed);
        if fnv1a64(key.as_bytes()) % 100 < self.val_percent {
            Subset::Val
        } else {
            Subset::Train
        }
    }

    /// Sorted `(train, val)` stem lists.
    pub fn partition<'a>(&self, stems: impl IntoIterator<Item = &'a str>) -> (Vec<String>, Vec<String>) {
        let (mut train, mut val): (Vec<String>, Vec<String>) = (Vec::new(), Vec::new());
        for s in stems {
            match self.assign(s) {
                Subset::Train => train.push(s.to_owned()),
                Subset::Val => val.push(s.to_owned()),
            }
        }
        train.sort();
        val.sort();
        (train, val)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoValidSamples,
    EmptyMask,
    RasterUnavailable,
    DimensionMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedInstance {
    pub annotation_id: u64,
    pub image_stem: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConversionReport {
    pub images: usize,
    pub train_images: usize,
    pub val_images: usize,
    pub written: usize,
    pub skipped: Vec<SkippedInstance>,
    /// Instances whose rounded mean height was negative and was clamped to 0.
    pub clamped_negatives: usize,
    /// Annotations with more than one polygon part (interior rings land here too).
    pub multipart: usize,
    /// Instances per class, index 0 = class 1.
    pub histogram: [u64; NUM_CLASSES],
}

impl ConversionReport {
    pub fn skipped_count(&self) -> usize {
        self.skipped.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images            {}", self.images);
        let _ = writeln!(s, "train_images      {}", self.train_images);
        let _ = writeln!(s, "val_images        {}", self.val_images);
        let _ = writeln!(s, "written           {}", self.written);
        let _ = writeln!(s, "skipped           {}", self.skipped.len());
        let _ = writeln!(s, "clamped_negatives {}", self.clamped_negatives);
        let _ = writeln!(s, "multipart         {}", self.multipart);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<6} {:<8} {:>8}", "class", "range", "count");
        for c in HeightClass::ALL {
            let _ = writeln!(
                s,
                "{:<6} {:<8} {:>8}",
                c.value(),
                c.range_label(),
                self.histogram[c.index()]
            );
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "skipped instances:");
            for k in &self.skipped {
                let reason = serde_json::to_value(k.reason).expect("reason serializes");
                let _ = writeln!(
                    s,
                    "  annotation {} ({}): {}",
                    k.annotation_id,
                    k.image_stem,
                    reason.as_str().unwrap_or_default()
                );
            }
        }
        s
    }
}

/// The polygon emitted for a building: its largest part, first part on ties.
pub fn label_part(annotation: &AnnotationRecord) -> &Polygon {
    let mut best = &annotation.parts[0];
    let mut best_area = polygon_area(best);
    for p in &annotation.parts[1..] {
        let a = polygon_area(p);
        if a > best_area {
            best = p;
            best_area = a;
        }
    }
    best
}

struct ImageOutcome {
    subset: Subset,
    path: PathBuf,
    instances: Vec<YoloInstance>,
    skipped: Vec<SkippedInstance>,
    clamped: usize,
    multipart: usize,
}

fn convert_image(
    image: &ImageRecord,
    annotations: &[&AnnotationRecord],
    raster_dir: &Path,
    out_dir: &Path,
    split: &SplitSpec,
) -> ImageOutcome {
    let stem = image.stem();
    let subset = split.assign(&stem);
    let path = out_dir
        .join("labels")
        .join(subset.dir_name())
        .join(format!("{stem}.txt"));
    let mut out = ImageOutcome {
        subset,
        path,
        instances: Vec::new(),
        skipped: Vec::new(),
        clamped: 0,
        multipart: annotations.iter().filter(|a| a.parts.len() > 1).count(),
    };
    let skip = |a: &AnnotationRecord, reason| SkippedInstance {
        annotation_id: a.id,
        image_stem: stem.clone(),
        reason,
    };

    let raster: Option<HeightRaster> =
        find_raster(raster_dir, &stem).and_then(|p| read_raster(&p).ok());
    let Some(raster) = raster else {
        out.skipped = annotations
            .iter()
            .map(|a| skip(a, SkipReason::RasterUnavailable))
            .collect();
        return out;
    };

    for ann in annotations {
        match estimate_instance(ann, &raster, image) {
            Ok((class, est)) => {
                let polygon = normalize(label_part(ann), image.width, image.height)
                    .expect("image dims are positive and parts have >= 3 vertices");
                out.clamped += est.clamped as usize;
                out.instances.push(YoloInstance::ground_truth(class, polygon));
            }
            Err(e) => {
                let reason = match e {
                    Error::NoValidSamples => SkipReason::NoValidSamples,
                    Error::EmptyMask => SkipReason::EmptyMask,
                    Error::DimensionMismatch { .. } => SkipReason::DimensionMismatch,
                    _ => SkipReason::RasterUnavailable,
                };
                out.skipped.push(skip(ann, reason));
            }
        }
    }
    out
}

pub fn convert_dataset(
    index: &DatasetIndex,
    raster_dir: &Path,
    out_dir: &Path,
    split: &SplitSpec,
) -> Result<ConversionReport> {
    convert_dataset_with(index, raster_dir, out_dir, split, Exec::default())
}

/// Writes `labels/{train,val}/<stem>.txt` under `out_dir`, one file per image.
///
/// Per-instance failures are recorded in the report; only I/O errors are fatal.
pub fn convert_dataset_with(
    index: &DatasetIndex,
    raster_dir: &Path,
    out_dir: &Path,
    split: &SplitSpec,
    exec: Exec,
) -> Result<ConversionReport> {
    for subset in [Subset::Train, Subset::Val] {
        let dir = out_dir.join("labels").join(subset.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let by_image = index.annotations_by_image();
    let outcomes = exec.map(index.images(), |img| {
        let anns = by_image.get(&img.id).map(Vec::as_slice).unwrap_or(&[]);
        let outcome = convert_image(img, anns, raster_dir, out_dir, split);
        let written = write_label_file(&outcome.instances, &outcome.path);
        (outcome, written)
    });

    let mut report = ConversionReport {
        images: index.images().len(),
        ..Default::default()
    };
    for (outcome, written) in outcomes {
        written?;
        match outcome.subset {
            Subset::Train => report.train_images += 1,
            Subset::Val => report.val_images += 1,
        }
        report.written += outcome.instances.len();
        for inst in &outcome.instances {
            report.histogram[inst.class_index as usize] += 1;
        }
        report.clamped_negatives += outcome.clamped;
        report.multipart += outcome.multipart;
        report.skipped.extend(outcome.skipped);
    }
    Ok(report)
}

/// Validates alignment first and refuses to convert when it is not clean.
pub fn convert_validated(
    index: &DatasetIndex,
    raster_dir: &Path,
    out_dir: &Path,
    split: &SplitSpec,
) -> Result<ConversionReport> {
    let v = validate_alignment(index, raster_dir);
    if !v.is_clean() {
        return Err(Error::Misaligned(v.problems().join("; ")));
    }
    convert_dataset(index, raster_dir, out_dir, split)
}
