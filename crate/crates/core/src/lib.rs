//! Building height classes from nDSM rasters, YOLO segmentation labels, and
//! box/mask mAP evaluation.
//!
//! The pipeline runs COCO polygons through [`ingest`], samples each building's
//! footprint in its height [`raster`], assigns one of five height tiers
//! ([`heightclass`]) and writes YOLO label files ([`labels`]). [`balance`] covers
//! class statistics, sampling weights and focal loss; [`eval`] scores prediction
//! label files against ground truth.
//!
//! Batch entry points take an [`Exec`]; with the default `parallel` feature they
//! fan out over rayon, otherwise they run sequentially with identical results.

pub mod balance;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod heightclass;
pub mod ingest;
pub mod labels;
mod par;
pub mod raster;

pub use error::{Error, Result};
pub use par::Exec;
