//! Box and mask mAP evaluation of prediction label files against ground truth.
//!
//! Matching is greedy per (image, class): detections in descending confidence (input
//! order on ties) each claim the unmatched ground truth of highest IoU (lowest index on
//! ties) when that IoU reaches the threshold. AP is the 101-point interpolated area
//! under the PR curve. mAP@50-95 averages AP over thresholds 0.50, 0.55, ..., 0.95.
//! The scalar precision/recall columns are read at the confidence cut maximizing F1 on
//! the 0.50 curve.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use serde::Serialize;

use crate::balance::label_files;
use crate::error::{Error, Result};
use crate::geometry::{bbox_of, box_iou, mask_iou, rasterize, BBox, BinaryMask, NormalizedPolygon, Polygon};
use crate::heightclass::{HeightClass, NUM_CLASSES};
use crate::ingest::file_stem;
use crate::labels::{parse_label_file, LabelKind, YoloInstance};
use crate::par::Exec;

pub const NUM_THRESHOLDS: usize = 10;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; NUM_THRESHOLDS] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Box,
    Mask,
}

impl IouKind {
    pub const BOTH: [IouKind; 2] = [IouKind::Box, IouKind::Mask];
}

/// An instance outline at image resolution with its box and a lazily rasterized mask.
#[derive(Debug)]
pub struct Shape {
    polygon: Polygon,
    bbox: BBox,
    width: usize,
    height: usize,
    mask: OnceLock<BinaryMask>,
}

impl Shape {
    pub fn new(polygon: &NormalizedPolygon, width: usize, height: usize) -> Self {
        let polygon = polygon.denormalize(width, height);
        let bbox = bbox_of(std::slice::from_ref(&polygon)).expect("polygon has vertices");
        Shape {
            polygon,
            bbox,
            width,
            height,
            mask: OnceLock::new(),
        }
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn mask(&self) -> &BinaryMask {
        self.mask.get_or_init(|| {
            rasterize(std::slice::from_ref(&self.polygon), self.width, self.height)
                .expect("image dimensions are positive")
        })
    }

    pub fn iou(&self, other: &Shape, kind: IouKind) -> f64 {
        match kind {
            IouKind::Box => box_iou(&self.bbox, &other.bbox),
            IouKind::Mask => mask_iou(self.mask(), other.mask()).unwrap_or(0.0),
        }
    }
}

#[derive(Debug)]
pub struct Detection {
    pub image_stem: String,
    pub class_index: u8,
    pub confidence: f64,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Per detection, in input order.
    pub det_tp: Vec<bool>,
    /// Per ground truth, in input order.
    pub gt_matched: Vec<bool>,
}

/// Detection indices in descending confidence, input order on ties.
fn rank_by_confidence(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    order
}

/// Greedy matching on a precomputed `iou[det][gt]` table.
pub fn match_by_iou(iou: &[Vec<f64>], confidences: &[f64], num_gt: usize, tau: f64) -> MatchResult {
    let mut det_tp = vec![false; confidences.len()];
    let mut gt_matched = vec![false; num_gt];
    for d in rank_by_confidence(confidences) {
        let mut best: Option<(usize, f64)> = None;
        for (g, &v) in iou[d].iter().enumerate() {
            if gt_matched[g] {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= tau {
                gt_matched[g] = true;
                det_tp[d] = true;
            }
        }
    }
    MatchResult { det_tp, gt_matched }
}

fn iou_table(gts: &[&Shape], dets: &[&Shape], kind: IouKind) -> Vec<Vec<f64>> {
    dets.iter()
        .map(|d| gts.iter().map(|g| d.iou(g, kind)).collect())
        .collect()
}

/// Matches one (image, class) group.
pub fn match_detections(gts: &[Shape], dets: &[Detection], kind: IouKind, tau: f64) -> MatchResult {
    let g: Vec<&Shape> = gts.iter().collect();
    let d: Vec<&Shape> = dets.iter().map(|d| &d.shape).collect();
    let conf: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
    match_by_iou(&iou_table(&g, &d, kind), &conf, gts.len(), tau)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PRCurve {
    /// `(recall, precision)` after each ranked detection.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

/// Cumulative PR points over ranked TP/FP flags and the 101-point interpolated AP.
pub fn average_precision(flags: &[bool], num_gt: usize) -> PRCurve {
    let mut points = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &f) in flags.iter().enumerate() {
        tp += f as usize;
        let recall = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
        points.push((recall, tp as f64 / (k + 1) as f64));
    }
    if num_gt == 0 {
        return PRCurve { points, ap: 0.0 };
    }
    // precision envelope: max precision at any recall >= this point's recall
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut j = 0;
    for r in 0..RECALL_POINTS {
        let level = r as f64 / 100.0;
        while j < points.len() && points[j].0 < level {
            j += 1;
        }
        if j < points.len() {
            sum += envelope[j];
        }
    }
    PRCurve {
        points,
        ap: sum / RECALL_POINTS as f64,
    }
}

/// Precision and recall at the confidence cut with the highest F1 (highest cut on ties).
/// Cuts only fall between distinct confidences. `(0, 0)` when no cut has a true positive.
pub fn precision_recall_at_max_f1(ranked: &[(f64, bool)], num_gt: usize) -> (f64, f64) {
    if num_gt == 0 {
        return (0.0, 0.0);
    }
    // F1 at a cut keeping k detections with tp hits is 2 tp / (k + num_gt); compared exactly
    let mut best: Option<(usize, usize)> = None;
    let mut tp = 0usize;
    for (i, &(conf, is_tp)) in ranked.iter().enumerate() {
        tp += is_tp as usize;
        let k = i + 1;
        let boundary = ranked.get(k).is_none_or(|next| next.0 != conf);
        if !boundary || tp == 0 {
            continue;
        }
        let better = best.is_none_or(|(btp, bk)| {
            (tp as u128) * ((bk + num_gt) as u128) > (btp as u128) * ((k + num_gt) as u128)
        });
        if better {
            best = Some((tp, k));
        }
    }
    match best {
        Some((tp, k)) => (tp as f64 / k as f64, tp as f64 / num_gt as f64),
        None => (0.0, 0.0),
    }
}

/// One image's ground truth and predictions.
#[derive(Debug, Clone)]
pub struct ImageEval {
    pub stem: String,
    pub width: usize,
    pub height: usize,
    pub ground_truth: Vec<YoloInstance>,
    pub predictions: Vec<YoloInstance>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricSet {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    /// `"1"`..`"5"` or `"all"`.
    pub class: String,
    pub images: usize,
    pub buildings: usize,
    #[serde(rename = "box")]
    pub boxes: MetricSet,
    pub mask: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Classes with at least one ground-truth instance.
    pub classes: Vec<ClassRow>,
    /// Unweighted mean over `classes`; `images` counts every evaluated image.
    pub all: ClassRow,
}

/// `(confidence, line, tp)` per detection.
type Records = Vec<(f64, usize, bool)>;

/// Per-class, per-kind, per-threshold ranked records from one image.
struct ImageScores {
    gt_counts: [usize; NUM_CLASSES],
    /// `[class][kind][tau]` -> `(confidence, line, tp)`
    records: Vec<Vec<Vec<Records>>>,
}

fn score_image(img: &ImageEval) -> ImageScores {
    let taus = iou_thresholds();
    let gts: Vec<Shape> = img
        .ground_truth
        .iter()
        .map(|g| Shape::new(&g.polygon, img.width, img.height))
        .collect();
    let dets: Vec<Shape> = img
        .predictions
        .iter()
        .map(|p| Shape::new(&p.polygon, img.width, img.height))
        .collect();

    let mut gt_counts = [0; NUM_CLASSES];
    let mut records = vec![vec![vec![Vec::new(); NUM_THRESHOLDS]; 2]; NUM_CLASSES];
    for (c, class_records) in records.iter_mut().enumerate() {
        let g_idx: Vec<usize> = (0..gts.len())
            .filter(|&i| img.ground_truth[i].class_index as usize == c)
            .collect();
        let d_idx: Vec<usize> = (0..dets.len())
            .filter(|&i| img.predictions[i].class_index as usize == c)
            .collect();
        gt_counts[c] = g_idx.len();
        if d_idx.is_empty() {
            continue;
        }
        let g: Vec<&Shape> = g_idx.iter().map(|&i| &gts[i]).collect();
        let d: Vec<&Shape> = d_idx.iter().map(|&i| &dets[i]).collect();
        let conf: Vec<f64> = d_idx
            .iter()
            .map(|&i| img.predictions[i].confidence.unwrap_or(0.0))
            .collect();
        for (k, kind) in IouKind::BOTH.into_iter().enumerate() {
            let table = iou_table(&g, &d, kind);
            for (t, &tau) in taus.iter().enumerate() {
                let m = match_by_iou(&table, &conf, g.len(), tau);
                class_records[k][t] = d_idx
                    .iter()
                    .zip(&m.det_tp)
                    .zip(&conf)
                    .map(|((&line, &tp), &c)| (c, line, tp))
                    .collect();
            }
        }
    }
    ImageScores { gt_counts, records }
}

pub fn evaluate_images(images: &[ImageEval]) -> EvalReport {
    evaluate_images_with(images, Exec::default())
}

pub fn evaluate_images_with(images: &[ImageEval], exec: Exec) -> EvalReport {
    // fixed image order so cross-image confidence ties resolve identically every run
    let mut order: Vec<&ImageEval> = images.iter().collect();
    order.sort_by(|a, b| a.stem.cmp(&b.stem));
    let scores = exec.map(&order, |img| score_image(img));

    let mut rows = Vec::new();
    for c in 0..NUM_CLASSES {
        let num_gt: usize = scores.iter().map(|s| s.gt_counts[c]).sum();
        if num_gt == 0 {
            continue;
        }
        let images_with = scores.iter().filter(|s| s.gt_counts[c] > 0).count();
        let mut kinds = IouKind::BOTH.map(|_| MetricSet::default());
        for (k, metrics) in kinds.iter_mut().enumerate() {
            let mut aps = [0.0; NUM_THRESHOLDS];
            for (t, ap) in aps.iter_mut().enumerate() {
                let mut ranked: Vec<(f64, usize, usize, bool)> = scores
                    .iter()
                    .enumerate()
                    .flat_map(|(i, s)| {
                        s.records[c][k][t]
                            .iter()
                            .map(move |&(conf, line, tp)| (conf, i, line, tp))
                    })
                    .collect();
                ranked.sort_by(|a, b| {
                    b.0.total_cmp(&a.0)
                        .then(a.1.cmp(&b.1))
                        .then(a.2.cmp(&b.2))
                });
                let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
                *ap = average_precision(&flags, num_gt).ap;
                if t == 0 {
                    let pairs: Vec<(f64, bool)> = ranked.iter().map(|r| (r.0, r.3)).collect();
                    let (p, r) = precision_recall_at_max_f1(&pairs, num_gt);
                    metrics.precision = p;
                    metrics.recall = r;
                }
            }
            metrics.map50 = aps[0];
            metrics.map50_95 = aps.iter().sum::<f64>() / NUM_THRESHOLDS as f64;
        }
        let [boxes, mask] = kinds;
        rows.push(ClassRow {
            class: HeightClass::from_index(c).expect("class index").to_string(),
            images: images_with,
            buildings: num_gt,
            boxes,
            mask,
        });
    }

    let mean = |f: &dyn Fn(&ClassRow) -> f64| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(f).sum::<f64>() / rows.len() as f64
        }
    };
    let set = |pick: fn(&ClassRow) -> &MetricSet| MetricSet {
        precision: mean(&|r| pick(r).precision),
        recall: mean(&|r| pick(r).recall),
        map50: mean(&|r| pick(r).map50),
        map50_95: mean(&|r| pick(r).map50_95),
    };
    let all = ClassRow {
        class: "all".into(),
        images: images.len(),
        buildings: rows.iter().map(|r| r.buildings).sum(),
        boxes: set(|r| &r.boxes),
        mask: set(|r| &r.mask),
    };
    EvalReport { classes: rows, all }
}

/// `<stem> <W> <H>` per line; blank lines and `#` comments are skipped.
pub fn parse_sizes(text: &str, origin: &Path) -> Result<BTreeMap<String, (usize, usize)>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: &str| Error::MalformedSizes {
            path: origin.to_path_buf(),
            line: i + 1,
            message: message.to_owned(),
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        let [stem, w, h] = toks[..] else {
            return Err(err("expected `<stem> <width> <height>`"));
        };
        let dim = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
        let (Some(w), Some(h)) = (dim(w), dim(h)) else {
            return Err(err("width and height must be positive integers"));
        };
        out.insert(stem.to_owned(), (w, h));
    }
    Ok(out)
}

pub fn read_sizes(path: &Path) -> Result<BTreeMap<String, (usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sizes(&text, path)
}

fn stem_map(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    Ok(label_files(dir)?
        .into_iter()
        .map(|p| (file_stem(&p.to_string_lossy()), p))
        .collect())
}

/// Loads `<stem>.txt` files from both directories. A stem without a ground-truth file has
/// no ground-truth instances.
pub fn load_images(
    gt_dir: &Path,
    pred_dir: &Path,
    image_sizes: &BTreeMap<String, (usize, usize)>,
) -> Result<Vec<ImageEval>> {
    let gt = stem_map(gt_dir)?;
    let pred = stem_map(pred_dir)?;
    let stems: BTreeSet<&String> = gt.keys().chain(pred.keys()).collect();
    stems
        .into_iter()
        .map(|stem| {
            let &(width, height) = image_sizes
                .get(stem)
                .ok_or_else(|| Error::DimensionUnknown(stem.clone()))?;
            let ground_truth = match gt.get(stem) {
                Some(p) => parse_label_file(p, LabelKind::GroundTruth)?,
                None => Vec::new(),
            };
            let predictions = match pred.get(stem) {
                Some(p) => parse_label_file(p, LabelKind::Prediction)?,
                None => Vec::new(),
            };
            Ok(ImageEval {
                stem: stem.clone(),
                width,
                height,
                ground_truth,
                predictions,
            })
        })
        .collect()
}

pub fn evaluate(
    gt_dir: &Path,
    pred_dir: &Path,
    image_sizes: &BTreeMap<String, (usize, usize)>,
) -> Result<EvalReport> {
    Ok(evaluate_images(&load_images(gt_dir, pred_dir, image_sizes)?))
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# images: per class, images containing that class in ground truth; for all, every evaluated image"
        );
        let _ = writeln!(
            s,
            "{:<6} {:>7} {:>9} {:>8} {:>8} {:>8} {:>11} {:>8} {:>8} {:>8} {:>11}",
            "Class",
            "Images",
            "Buildings",
            "Prec(B)",
            "Rec(B)",
            "mAP50(B)",
            "mAP50-95(B)",
            "Prec(M)",
            "Rec(M)",
            "mAP50(M)",
            "mAP50-95(M)"
        );
        for row in self.classes.iter().chain(std::iter::once(&self.all)) {
            let _ = writeln!(
                s,
                "{:<6} {:>7} {:>9} {:>8.3} {:>8.3} {:>8.3} {:>11.3} {:>8.3} {:>8.3} {:>8.3} {:>11.3}",
                row.class,
                row.images,
                row.buildings,
                row.boxes.precision,
                row.boxes.recall,
                row.boxes.map50,
                row.boxes.map50_95,
                row.mask.precision,
                row.mask.recall,
                row.mask.map50,
                row.mask.map50_95
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
