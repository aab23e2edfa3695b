//! Per-building mean height and the five-tier height classes.
//!
//! | class | rounded mean height (m) |
//! |-------|-------------------------|
//! | 1     | 0 – 10                  |
//! | 2     | 11 – 20                 |
//! | 3     | 21 – 30                 |
//! | 4     | 31 – 40                 |
//! | 5     | 41 and above            |

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::rasterize;
use crate::ingest::{AnnotationRecord, ImageRecord};
use crate::raster::{sample_under_mask, HeightRaster};

pub const NUM_CLASSES: usize = 5;

/// Inclusive upper bound (m) of classes 1 through 4; class 5 is open-ended.
pub const CLASS_UPPER_BOUNDS: [i64; 4] = [10, 20, 30, 40];

/// Height tier, 1-based as in the class table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct HeightClass(u8);

impl HeightClass {
    pub const ALL: [HeightClass; NUM_CLASSES] = [
        HeightClass(1),
        HeightClass(2),
        HeightClass(3),
        HeightClass(4),
        HeightClass(5),
    ];

    pub fn new(value: u8) -> Result<Self> {
        if (1..=NUM_CLASSES as u8).contains(&value) {
            Ok(HeightClass(value))
        } else {
            Err(Error::InvalidClass(value.into()))
        }
    }

    /// 0-based index used on disk.
    pub fn from_index(index: usize) -> Result<Self> {
        if index < NUM_CLASSES {
            Ok(HeightClass(index as u8 + 1))
        } else {
            Err(Error::InvalidClass(index as i64 + 1))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    /// Human-readable range, e.g. `"11-20 m"`.
    pub fn range_label(self) -> &'static str {
        ["0-10 m", "11-20 m", "21-30 m", "31-40 m", "41+ m"][self.index()]
    }
}

impl TryFrom<u8> for HeightClass {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        HeightClass::new(v)
    }
}

impl From<HeightClass> for u8 {
    fn from(c: HeightClass) -> u8 {
        c.0
    }
}

impl fmt::Display for HeightClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HeightEstimate {
    /// Rounded mean of the valid samples, clamped at 0.
    pub mean_m: i64,
    pub valid_samples: usize,
    pub total_samples: usize,
    /// The rounded mean was negative and has been clamped to 0.
    pub clamped: bool,
}

/// Mean of the non-NaN samples, rounded half away from zero. Negative results clamp to 0.
pub fn mean_height(samples: &[f64]) -> Result<HeightEstimate> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &h in samples {
        if !h.is_nan() {
            sum += h;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidSamples);
    }
    let rounded = (sum / n as f64).round() as i64;
    Ok(HeightEstimate {
        mean_m: rounded.max(0),
        valid_samples: n,
        total_samples: samples.len(),
        clamped: rounded < 0,
    })
}

pub fn classify(mean_m: i64) -> Result<HeightClass> {
    if mean_m < 0 {
        return Err(Error::NegativeHeight(mean_m));
    }
    let tier = CLASS_UPPER_BOUNDS
        .iter()
        .position(|&upper| mean_m <= upper)
        .unwrap_or(NUM_CLASSES - 1);
    Ok(HeightClass(tier as u8 + 1))
}

/// Rasterizes the union of the annotation's parts, samples the raster under it and
/// classes the rounded mean.
pub fn estimate_instance(
    annotation: &AnnotationRecord,
    raster: &HeightRaster,
    image: &ImageRecord,
) -> Result<(HeightClass, HeightEstimate)> {
    let dims = (image.width, image.height);
    if raster.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            found: raster.dims(),
        });
    }
    let mask = rasterize(&annotation.parts, image.width, image.height)?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let samples = sample_under_mask(raster, &mask)?;
    let estimate = mean_height(&samples)?;
    Ok((classify(estimate.mean_m)?, estimate))
}
