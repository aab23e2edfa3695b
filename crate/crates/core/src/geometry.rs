//! Polygon math: normalization, even-odd rasterization, areas, boxes, IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Polygon in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DegeneratePolygon(format!(
                "{} vertices, need at least 3",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::DegeneratePolygon("non-finite vertex".into()));
        }
        Ok(Polygon { vertices })
    }

    /// Builds a polygon from a flat `[x1, y1, x2, y2, ...]` list.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(Error::DegeneratePolygon(format!(
                "odd coordinate count {}",
                coords.len()
            )));
        }
        Polygon::new(
            coords
                .chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
        )
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

/// Polygon in unit image coordinates, every coordinate in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPolygon {
    vertices: Vec<Point>,
}

impl NormalizedPolygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DegeneratePolygon(format!(
                "{} vertices, need at least 3",
                vertices.len()
            )));
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if let Some(p) = vertices.iter().find(|p| !in_unit(p.x) || !in_unit(p.y)) {
            return Err(Error::DegeneratePolygon(format!(
                "normalized vertex ({}, {}) outside [0, 1]",
                p.x, p.y
            )));
        }
        Ok(NormalizedPolygon { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Scales back to pixel coordinates.
    pub fn denormalize(&self, width: usize, height: usize) -> Polygon {
        let (w, h) = (width as f64, height as f64);
        Polygon {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point::new(p.x * w, p.y * h))
                .collect(),
        }
    }
}

/// Maps each vertex to `(x / W, y / H)`, clamping the result into `[0, 1]`.
pub fn normalize(polygon: &Polygon, width: usize, height: usize) -> Result<NormalizedPolygon> {
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension { width, height });
    }
    let (w, h) = (width as f64, height as f64);
    NormalizedPolygon::new(
        polygon
            .vertices
            .iter()
            .map(|p| Point::new((p.x / w).clamp(0.0, 1.0), (p.y / h).clamp(0.0, 1.0)))
            .collect(),
    )
}

/// Absolute shoelace area in square pixels.
pub fn polygon_area(polygon: &Polygon) -> f64 {
    let twice: f64 = polygon
        .edges()
        .map(|(a, b)| a.x * b.y - b.x * a.y)
        .sum();
    twice.abs() * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }
}

/// Tight bounds over every vertex of every part. `None` for an empty slice.
pub fn bbox_of(parts: &[Polygon]) -> Option<BBox> {
    let mut it = parts.iter().flat_map(|p| p.vertices.iter());
    let first = it.next()?;
    let init = BBox {
        xmin: first.x,
        ymin: first.y,
        xmax: first.x,
        ymax: first.y,
    };
    Some(it.fold(init, |b, p| BBox {
        xmin: b.xmin.min(p.x),
        ymin: b.ymin.min(p.y),
        xmax: b.xmax.max(p.x),
        ymax: b.ymax.max(p.y),
    }))
}

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Row-major bit grid, packed 64 pixels per word.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("set", &self.count_ones())
            .finish()
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            words: vec![0; (width * height).div_ceil(64)],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        assert!(row < self.height && col < self.width, "pixel out of bounds");
        let i = row * self.width + col;
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize) {
        assert!(row < self.height && col < self.width, "pixel out of bounds");
        let i = row * self.width + col;
        self.words[i / 64] |= 1 << (i % 64);
    }

    /// Sets columns `[c0, c1)` of one row.
    fn set_span(&mut self, row: usize, c0: usize, c1: usize) {
        let base = row * self.width;
        let (mut i, end) = (base + c0, base + c1);
        while i < end {
            let (w, b) = (i / 64, i % 64);
            let n = (64 - b).min(end - i);
            let bits = if n == 64 { u64::MAX } else { ((1u64 << n) - 1) << b };
            self.words[w] |= bits;
            i += n;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Row-major flat indices of set pixels.
    pub fn iter_set(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }
}

/// Sets pixel `(r, c)` iff its center `(c + 0.5, r + 0.5)` is inside at least one
/// part under the even-odd rule.
pub fn rasterize(parts: &[Polygon], width: usize, height: usize) -> Result<BinaryMask> {
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension { width, height });
    }
    let mut mask = BinaryMask::new(width, height);
    let mut crossings = Vec::new();
    for part in parts {
        fill_even_odd(&mut mask, part, &mut crossings);
    }
    Ok(mask)
}

fn fill_even_odd(mask: &mut BinaryMask, poly: &Polygon, crossings: &mut Vec<f64>) {
    let (ymin, ymax) = poly
        .vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.y), hi.max(p.y))
        });
    // rows whose center lies in [ymin, ymax]
    let r0 = clamp_index((ymin - 0.5).floor(), mask.height);
    let r1 = clamp_index((ymax - 0.5).ceil() + 1.0, mask.height);

    for row in r0..r1 {
        let y = row as f64 + 0.5;
        crossings.clear();
        for (a, b) in poly.edges() {
            // half-open rule: an edge counts when it straddles y strictly on one side
            if (a.y > y) != (b.y > y) {
                crossings.push((b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x);
            }
        }
        crossings.sort_by(f64::total_cmp);
        // center x is inside iff an odd number of crossings lie strictly right of it,
        // i.e. x in [c[2k], c[2k+1])
        for pair in crossings.chunks_exact(2) {
            let c0 = first_center_at_or_after(pair[0], mask.width);
            let c1 = first_center_at_or_after(pair[1], mask.width);
            if c0 < c1 {
                mask.set_span(row, c0, c1);
            }
        }
    }
}

fn clamp_index(v: f64, len: usize) -> usize {
    if v <= 0.0 {
        0
    } else if v >= len as f64 {
        len
    } else {
        v as usize
    }
}

/// Smallest column `c` in `[0, len]` with `c + 0.5 >= x`.
fn first_center_at_or_after(x: f64, len: usize) -> usize {
    let mut c = clamp_index((x - 0.5).ceil(), len);
    while c > 0 && (c - 1) as f64 + 0.5 >= x {
        c -= 1;
    }
    while c < len && (c as f64 + 0.5) < x {
        c += 1;
    }
    c
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones() as u64;
        union += (x | y).count_ones() as u64;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}
