//! Single-band height rasters.
//!
//! Two on-disk formats are understood:
//!
//! * ESRI ASCII Grid (`.asc`): header keys `ncols`, `nrows`, `xllcorner`/`xllcenter`,
//!   `yllcorner`/`yllcenter`, `cellsize`, `NODATA_value` (case-insensitive, any order),
//!   followed by whitespace-separated cells, row-major from the top row.
//! * `HGR1` binary (`.hgr`): a 16-byte header (`b"HGR1"`, width as `u32` LE, height as
//!   `u32` LE, 4 reserved zero bytes) followed by `width * height` little-endian `f32`
//!   cells, row-major.
//!
//! Every NoData cell (the ASCII sentinel, or any non-finite value) becomes NaN on load.
//! Georeferencing fields are parsed and validated but otherwise unused: the raster is
//! assumed to be pixel-aligned with its image.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::BinaryMask;

pub const HGR_MAGIC: &[u8; 4] = b"HGR1";
pub const HGR_HEADER_LEN: usize = 16;

/// Extensions probed, in order, when pairing an image stem with its raster.
pub const RASTER_EXTENSIONS: &[&str] = &["asc", "hgr"];

#[derive(Debug, Clone)]
pub struct HeightRaster {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl HeightRaster {
    /// Non-finite inputs are stored as NaN.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::HeaderMismatch(format!(
                "{}x{} grid needs {} cells, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v } else { f64::NAN })
            .collect();
        Ok(HeightRaster {
            width,
            height,
            values,
        })
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// NaN-aware equality of dimensions and cells.
    pub fn same_as(&self, other: &HeightRaster) -> bool {
        self.dims() == other.dims()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    AsciiGrid,
    Hgr1,
}

fn sniff(bytes: &[u8]) -> Result<RasterFormat> {
    if bytes.starts_with(HGR_MAGIC) {
        return Ok(RasterFormat::Hgr1);
    }
    let head = &bytes[..bytes.len().min(64)];
    let text = String::from_utf8_lossy(head);
    let first = text.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
    if ASCII_KEYS.contains(&first.as_str()) {
        Ok(RasterFormat::AsciiGrid)
    } else {
        Err(Error::UnknownFormat(
            "neither an ESRI ASCII grid nor an HGR1 file".into(),
        ))
    }
}

const ASCII_KEYS: &[&str] = &[
    "ncols",
    "nrows",
    "xllcorner",
    "yllcorner",
    "xllcenter",
    "yllcenter",
    "cellsize",
    "nodata_value",
];

pub fn read_raster(path: &Path) -> Result<HeightRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_raster(&bytes)
}

pub fn parse_raster(bytes: &[u8]) -> Result<HeightRaster> {
    match sniff(bytes)? {
        RasterFormat::Hgr1 => parse_hgr(bytes),
        RasterFormat::AsciiGrid => {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| Error::UnknownFormat("ASCII grid is not valid UTF-8".into()))?;
            parse_ascii_grid(text)
        }
    }
}

/// `(width, height)` from the header, without decoding cells.
pub fn read_dimensions(path: &Path) -> Result<(usize, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match sniff(&bytes)? {
        RasterFormat::Hgr1 => hgr_header(&bytes),
        RasterFormat::AsciiGrid => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::UnknownFormat("ASCII grid is not valid UTF-8".into()))?;
            let (header, _) = ascii_header(text)?;
            Ok((header.ncols, header.nrows))
        }
    }
}

/// `<dir>/<stem>.<ext>` for the first existing extension in [`RASTER_EXTENSIONS`].
pub fn find_raster(dir: &Path, stem: &str) -> Option<PathBuf> {
    RASTER_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

struct AsciiHeader {
    ncols: usize,
    nrows: usize,
    nodata: Option<f64>,
}

/// Parses the header; returns it with the remaining cell text.
fn ascii_header(text: &str) -> Result<(AsciiHeader, &str)> {
    let mut ncols = None;
    let mut nrows = None;
    let mut nodata = None;
    let mut rest = text;
    loop {
        let trimmed = rest.trim_start();
        let line_end = trimmed.find('\n').unwrap_or(trimmed.len());
        let line = &trimmed[..line_end];
        let mut toks = line.split_whitespace();
        let Some(key) = toks.next() else { break };
        let key = key.to_ascii_lowercase();
        if !ASCII_KEYS.contains(&key.as_str()) {
            break;
        }
        let raw = toks
            .next()
            .ok_or_else(|| Error::UnknownFormat(format!("header key `{key}` has no value")))?;
        if toks.next().is_some() {
            return Err(Error::UnknownFormat(format!(
                "header line `{}` has trailing tokens",
                line.trim()
            )));
        }
        let value: f64 = raw
            .parse()
            .map_err(|_| Error::UnknownFormat(format!("header `{key}` value `{raw}`")))?;
        if !value.is_finite() {
            return Err(Error::NonFiniteHeader(key));
        }
        match key.as_str() {
            "ncols" => ncols = Some(dimension(&key, value)?),
            "nrows" => nrows = Some(dimension(&key, value)?),
            "nodata_value" => nodata = Some(value),
            _ => {}
        }
        rest = &trimmed[line_end..];
    }
    let ncols = ncols.ok_or_else(|| Error::UnknownFormat("missing `ncols`".into()))?;
    let nrows = nrows.ok_or_else(|| Error::UnknownFormat("missing `nrows`".into()))?;
    Ok((
        AsciiHeader {
            ncols,
            nrows,
            nodata,
        },
        rest,
    ))
}

fn dimension(key: &str, value: f64) -> Result<usize> {
    if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
        return Err(Error::HeaderMismatch(format!(
            "`{key}` must be a positive integer, got {value}"
        )));
    }
    Ok(value as usize)
}

pub fn parse_ascii_grid(text: &str) -> Result<HeightRaster> {
    let (header, cells) = ascii_header(text)?;
    let expected = header.ncols * header.nrows;
    let mut values = Vec::with_capacity(expected);
    for tok in cells.split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::UnknownFormat(format!("cell value `{tok}`")))?;
        values.push(v);
    }
    if values.len() != expected {
        return Err(Error::HeaderMismatch(format!(
            "header declares {}x{} = {} cells, payload has {}",
            header.ncols,
            header.nrows,
            expected,
            values.len()
        )));
    }
    if let Some(nd) = header.nodata {
        for v in &mut values {
            if *v == nd {
                *v = f64::NAN;
            }
        }
    }
    HeightRaster::new(header.ncols, header.nrows, values)
}

fn hgr_header(bytes: &[u8]) -> Result<(usize, usize)> {
    if bytes.len() < HGR_HEADER_LEN {
        return Err(Error::HeaderMismatch(format!(
            "HGR1 header needs {HGR_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    Ok((word(4), word(8)))
}

pub fn parse_hgr(bytes: &[u8]) -> Result<HeightRaster> {
    let (width, height) = hgr_header(bytes)?;
    let payload = &bytes[HGR_HEADER_LEN..];
    let cells = width
        .checked_mul(height)
        .ok_or_else(|| Error::HeaderMismatch("dimensions overflow".into()))?;
    if payload.len() != cells * 4 {
        return Err(Error::HeaderMismatch(format!(
            "header declares {width}x{height} = {cells} cells, payload has {} bytes",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    HeightRaster::new(width, height, values)
}

/// Encodes to `HGR1`. Cells are narrowed to `f32`.
pub fn encode_hgr(raster: &HeightRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HGR_HEADER_LEN + raster.values.len() * 4);
    out.extend_from_slice(HGR_MAGIC);
    out.extend_from_slice(&(raster.width as u32).to_le_bytes());
    out.extend_from_slice(&(raster.height as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for &v in &raster.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_hgr(raster: &HeightRaster, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_hgr(raster))
        .map_err(|e| Error::io(path, e))
}

/// Heights at every set mask pixel, row-major, NaN cells included.
pub fn sample_under_mask(raster: &HeightRaster, mask: &BinaryMask) -> Result<Vec<f64>> {
    if raster.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: raster.dims(),
            found: mask.dims(),
        });
    }
    Ok(mask.iter_set().map(|i| raster.values[i]).collect())
}
