//! Class distribution, inverse-frequency image sampling weights, and focal loss.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heightclass::{HeightClass, NUM_CLASSES};
use crate::ingest::file_stem;
use crate::labels::{parse_label_file, write_atomic, LabelKind, YoloInstance};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassHistogram {
    /// Index 0 = class 1.
    pub counts: [u64; NUM_CLASSES],
    pub total: u64,
}

impl ClassHistogram {
    pub fn from_counts(counts: [u64; NUM_CLASSES]) -> Self {
        ClassHistogram {
            counts,
            total: counts.iter().sum(),
        }
    }

    pub fn add(&mut self, class: HeightClass) {
        self.counts[class.index()] += 1;
        self.total += 1;
    }

    pub fn count(&self, class: HeightClass) -> u64 {
        self.counts[class.index()]
    }

    /// Share of each class in percent; all zero for an empty histogram.
    pub fn percentages(&self) -> [f64; NUM_CLASSES] {
        let mut out = [0.0; NUM_CLASSES];
        if self.total > 0 {
            for (o, &c) in out.iter_mut().zip(&self.counts) {
                *o = c as f64 / self.total as f64 * 100.0;
            }
        }
        out
    }

    /// Percentages at one decimal, apportioned by largest remainder so they sum to
    /// exactly 100.0 (ties go to the lower class).
    pub fn reported_percentages(&self) -> [f64; NUM_CLASSES] {
        let mut out = [0.0; NUM_CLASSES];
        if self.total == 0 {
            return out;
        }
        let total = self.total as u128;
        let mut tenths = [0u128; NUM_CLASSES];
        let mut rem = [(0u128, 0usize); NUM_CLASSES];
        for (i, &c) in self.counts.iter().enumerate() {
            let scaled = c as u128 * 1000;
            tenths[i] = scaled / total;
            rem[i] = (scaled % total, i);
        }
        let short = 1000 - tenths.iter().sum::<u128>();
        rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in rem.iter().take(short as usize) {
            tenths[i] += 1;
        }
        for (o, t) in out.iter_mut().zip(tenths) {
            *o = t as f64 / 10.0;
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<6} {:<8} {:>10} {:>8}", "class", "range", "count", "percent");
        let pct = self.reported_percentages();
        for c in HeightClass::ALL {
            let _ = writeln!(
                s,
                "{:<6} {:<8} {:>10} {:>7.1}%",
                c.value(),
                c.range_label(),
                self.count(c),
                pct[c.index()]
            );
        }
        let _ = writeln!(s, "{:<6} {:<8} {:>10}", "total", "", self.total);
        s
    }
}

/// Every `*.txt` under `dir`, recursively, sorted by path.
pub(crate) fn label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "txt") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn load_corpus(label_dir: &Path) -> Result<Vec<(String, Vec<YoloInstance>)>> {
    label_files(label_dir)?
        .into_iter()
        .map(|p| {
            let stem = file_stem(&p.to_string_lossy());
            parse_label_file(&p, LabelKind::GroundTruth).map(|v| (stem, v))
        })
        .collect()
}

fn histogram_of<'a>(instances: impl IntoIterator<Item = &'a YoloInstance>) -> ClassHistogram {
    let mut h = ClassHistogram::default();
    for i in instances {
        h.add(i.class());
    }
    h
}

pub fn class_histogram(label_dir: &Path) -> Result<ClassHistogram> {
    let corpus = load_corpus(label_dir)?;
    Ok(histogram_of(corpus.iter().flat_map(|(_, v)| v)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleWeights {
    /// Sorted by image stem.
    pub weights: BTreeMap<String, f64>,
    pub normalized: bool,
}

impl SampleWeights {
    /// `<stem> <weight>` lines with 9 decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (stem, w) in &self.weights {
            let _ = writeln!(s, "{stem} {w:.9}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Per-image weights from per-instance inverse class frequencies of `images` itself.
pub fn weights_for(images: &[(String, Vec<YoloInstance>)]) -> Result<SampleWeights> {
    let hist = histogram_of(images.iter().flat_map(|(_, v)| v));
    weights_with_frequencies(images, &hist)
}

/// Per-image weights against corpus class frequencies `corpus`.
///
/// Each image's raw weight is the mean of `total / count_c` over its instances; empty
/// images get the smallest raw weight seen. The result sums to 1.
pub fn weights_with_frequencies(
    images: &[(String, Vec<YoloInstance>)],
    corpus: &ClassHistogram,
) -> Result<SampleWeights> {
    if corpus.total == 0 {
        return Err(Error::EmptyDataset);
    }
    let inv_freq = |c: HeightClass| -> Result<f64> {
        match corpus.count(c) {
            0 => Err(Error::DomainError(format!(
                "class {c} occurs in an image but has zero corpus frequency"
            ))),
            n => Ok(corpus.total as f64 / n as f64),
        }
    };
    let mut raw = Vec::with_capacity(images.len());
    for (_, insts) in images {
        raw.push(if insts.is_empty() {
            None
        } else {
            let mut acc = 0.0;
            for i in insts {
                acc += inv_freq(i.class())?;
            }
            Some(acc / insts.len() as f64)
        });
    }
    let floor = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Err(Error::EmptyDataset);
    }
    let raw: Vec<f64> = raw.into_iter().map(|w| w.unwrap_or(floor)).collect();
    let sum: f64 = raw.iter().sum();
    let weights = images
        .iter()
        .zip(raw)
        .map(|((stem, _), w)| (stem.clone(), w / sum))
        .collect();
    Ok(SampleWeights {
        weights,
        normalized: true,
    })
}

pub fn image_weights(label_dir: &Path) -> Result<SampleWeights> {
    weights_for(&load_corpus(label_dir)?)
}

pub const DEFAULT_FOCAL_ALPHA: f64 = 0.25;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLoss {
    /// Nats.
    pub loss: f64,
    /// d(loss)/dp.
    pub grad: f64,
}

/// `-alpha * (1 - p)^gamma * ln p` for the true-class probability `p`, with its derivative
/// `alpha * (1 - p)^(gamma - 1) * (gamma * ln p - (1 - p) / p)`.
pub fn focal_loss(p: f64, alpha: f64, gamma: f64) -> Result<FocalLoss> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::DomainError(format!("probability {p} not in (0, 1]")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::DomainError(format!("alpha {alpha} not in (0, 1]")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::DomainError(format!("gamma {gamma} must be >= 0")));
    }
    let q = 1.0 - p;
    let log_p = p.ln();
    let loss = -alpha * q.powf(gamma) * log_p;
    let grad = if q == 0.0 {
        // limit at p = 1: only the gamma = 0 cross-entropy slope survives
        if gamma == 0.0 {
            -alpha
        } else {
            0.0
        }
    } else {
        alpha * q.powf(gamma - 1.0) * (gamma * log_p - q / p)
    };
    Ok(FocalLoss { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{NormalizedPolygon, Point};
    use proptest::prelude::*;

    fn inst(class: u8) -> YoloInstance {
        YoloInstance::ground_truth(
            HeightClass::new(class).unwrap(),
            NormalizedPolygon::new(vec![
                Point::new(0.1, 0.1),
                Point::new(0.2, 0.1),
                Point::new(0.2, 0.2),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn percentages_of_fixture_counts() {
        let h = ClassHistogram::from_counts([3, 2, 1, 1, 1]);
        assert_eq!(h.total, 8);
        assert_eq!(h.percentages(), [37.5, 25.0, 12.5, 12.5, 12.5]);
        assert_eq!(h.reported_percentages(), [37.5, 25.0, 12.5, 12.5, 12.5]);
        assert!(h.to_text().contains(" 37.5%"));
        // thirds: 33.3 * 3 would sum to 99.9
        let h = ClassHistogram::from_counts([1, 1, 1, 0, 0]);
        assert_eq!(h.reported_percentages(), [33.4, 33.3, 33.3, 0.0, 0.0]);
    }

    #[test]
    fn empty_dir_histogram() {
        let dir = tempfile::tempdir().unwrap();
        let h = class_histogram(dir.path()).unwrap();
        assert_eq!(h, ClassHistogram::default());
        assert_eq!(h.percentages(), [0.0; 5]);
    }

    #[test]
    fn two_image_worked_example() {
        let images = vec![
            ("a".to_string(), vec![inst(1)]),
            ("b".to_string(), vec![inst(5)]),
        ];
        let corpus = ClassHistogram::from_counts([3, 0, 0, 0, 1]);
        let w = weights_with_frequencies(&images, &corpus).unwrap();
        assert!((w.weights["a"] - 0.25).abs() < 1e-12);
        assert!((w.weights["b"] - 0.75).abs() < 1e-12);
        assert_eq!(w.to_text(), "a 0.250000000\nb 0.750000000\n");

        let missing = ClassHistogram::from_counts([3, 0, 0, 0, 0]);
        assert!(matches!(
            weights_with_frequencies(&images, &missing),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn weights_from_own_corpus() {
        // corpus counts {1: 3, 5: 1}; A holds a class-1 instance, B the class-5 one
        let images = vec![
            ("a".to_string(), vec![inst(1)]),
            ("b".to_string(), vec![inst(5)]),
            ("c".to_string(), vec![inst(1), inst(1)]),
        ];
        let w = weights_for(&images).unwrap();
        let raw_a = 4.0 / 3.0;
        let raw_b = 4.0;
        let sum = raw_a + raw_b + raw_a;
        assert!((w.weights["a"] - raw_a / sum).abs() < 1e-12);
        assert!((w.weights["b"] - raw_b / sum).abs() < 1e-12);

        let pair = vec![
            ("a".to_string(), vec![inst(1)]),
            ("b".to_string(), vec![inst(5)]),
        ];
        // with only A and B the corpus is {1: 1, 5: 1}, so weights are uniform
        let w = weights_for(&pair).unwrap();
        assert!((w.weights["a"] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_mixes_are_uniform_and_single_is_one() {
        let images: Vec<_> = (0..4)
            .map(|i| (format!("t{i}"), vec![inst(1), inst(3)]))
            .collect();
        let w = weights_for(&images).unwrap();
        for v in w.weights.values() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let w = weights_for(&[("only".to_string(), vec![inst(2)])]).unwrap();
        assert_eq!(w.weights["only"], 1.0);
        assert_eq!(w.to_text(), "only 1.000000000\n");
    }

    #[test]
    fn empty_images_get_min_weight() {
        let images = vec![
            ("a".to_string(), vec![inst(1), inst(1), inst(1)]),
            ("b".to_string(), vec![inst(5)]),
            ("e".to_string(), vec![]),
        ];
        let w = weights_for(&images).unwrap();
        assert_eq!(w.weights["e"], w.weights["a"]);
        assert!(matches!(
            weights_for(&[("e".to_string(), vec![])]),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn focal_examples() {
        assert_eq!(focal_loss(1.0, 0.25, 2.0).unwrap().loss, 0.0);
        let f = focal_loss(0.5, 0.25, 2.0).unwrap();
        assert!((f.loss - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((f.loss - 0.043321).abs() < 1e-6);
        for p in [0.01, 0.3, 0.77] {
            let f = focal_loss(p, 1.0, 0.0).unwrap();
            assert!((f.loss + p.ln()).abs() < 1e-12);
            assert!((f.grad + 1.0 / p).abs() < 1e-12);
        }
        assert_eq!(focal_loss(1.0, 0.5, 0.0).unwrap().grad, -0.5);
        assert_eq!(focal_loss(1.0, 0.5, 0.5).unwrap().grad, 0.0);
    }

    #[test]
    fn focal_domain() {
        assert!(matches!(focal_loss(0.0, 0.25, 2.0), Err(Error::DomainError(_))));
        assert!(matches!(focal_loss(1.1, 0.25, 2.0), Err(Error::DomainError(_))));
        assert!(matches!(focal_loss(f64::NAN, 0.25, 2.0), Err(Error::DomainError(_))));
        assert!(focal_loss(0.5, 0.0, 2.0).is_err());
        assert!(focal_loss(0.5, 0.25, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn focal_nonincreasing(a in 0.001..1.0f64, b in 0.001..1.0f64, gamma in 0.0..6.0f64) {
            let (lo, hi) = (a.min(b), a.max(b));
            let l = focal_loss(lo, 0.25, gamma).unwrap().loss;
            let h = focal_loss(hi, 0.25, gamma).unwrap().loss;
            prop_assert!(h <= l);
            prop_assert!(focal_loss(lo, 0.25, gamma).unwrap().grad <= 0.0);
        }

        #[test]
        fn percentages_sum_to_100(counts in prop::array::uniform5(0u64..10_000)) {
            let h = ClassHistogram::from_counts(counts);
            prop_assume!(h.total > 0);
            let reported = h.reported_percentages();
            let sum: f64 = reported.iter().sum();
            prop_assert!((sum - 100.0).abs() <= 0.1);
            for (r, exact) in reported.iter().zip(h.percentages()) {
                prop_assert!((r - exact).abs() < 0.1 + 1e-9);
            }
        }
    }
}
