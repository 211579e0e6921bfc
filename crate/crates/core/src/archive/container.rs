//! Binary chip container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "LMCH"            4 bytes
//! version u16               currently 1
//! kind    u8                0 = chip, 1 = single-channel grid
//! chip:
//!   flags u8                bit0 calibrated, bit1 has sza, bit2 has HRV
//!   id i64, num u32
//!   name  u32 len + UTF-8
//!   centre f64 x2, lat f64, lon f64
//!   time  14 ASCII bytes (YYYYMMDDhhmmss)
//!   sza   f64 (0 when absent)
//!   rows u32, cols u32, n_channels u32, channel numbers u8 x n
//!   cube  f64 x rows*cols*n  (row-major, channel fastest)
//!   mask  f64 x rows*cols
//!   [hrv  rows u32, cols u32, f64 x rows*cols]
//! grid:
//!   label u32 len + UTF-8
//!   rows u32, cols u32, f64 x rows*cols
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use super::{AcqTime, ArchiveError, LandmarkChip, LatLon};
use crate::masks::PixelLabel;

const MAGIC: &[u8; 4] = b"LMCH";
const VERSION: u16 = 1;
const KIND_CHIP: u8 = 0;
const KIND_GRID: u8 = 1;

const FLAG_CALIBRATED: u8 = 1;
const FLAG_SZA: u8 = 1 << 1;
const FLAG_HRV: u8 = 1 << 2;

/// File extension used for chip containers.
pub const CHIP_EXT: &str = "lmch";
/// File extension used for single-channel grid containers.
pub const GRID_EXT: &str = "lmgrid";

/// A labelled single-channel raster (land cover, coastline, truth, predictions,
/// accuracy maps).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub label: String,
    pub data: Array2<f64>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn dim(&mut self, n: usize) -> Result<(), ArchiveError> {
        let v = u32::try_from(n)
            .map_err(|_| ArchiveError::InvalidChip(format!("dimension {n} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }
    fn header(&mut self, kind: u8) {
        self.0.extend_from_slice(MAGIC);
        self.u16(VERSION);
        self.u8(kind);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                ArchiveError::MalformedContainer(format!(
                    "truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ArchiveError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, ArchiveError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ArchiveError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, ArchiveError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| ArchiveError::MalformedContainer("string is not UTF-8".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ArchiveError> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| ArchiveError::MalformedContainer("array size overflow".into()))?;
        let b = self.take(bytes)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn header(&mut self) -> Result<u8, ArchiveError> {
        if self.take(4)? != MAGIC {
            return Err(ArchiveError::MalformedContainer("bad magic".into()));
        }
        let v = self.u16()?;
        if v != VERSION {
            return Err(ArchiveError::MalformedContainer(format!(
                "unsupported version {v}"
            )));
        }
        self.u8()
    }
    fn finish(&self) -> Result<(), ArchiveError> {
        if self.pos != self.buf.len() {
            return Err(ArchiveError::MalformedContainer(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn encode_chip(chip: &LandmarkChip) -> Result<Vec<u8>, ArchiveError> {
    chip.validate()?;
    let (rows, cols, nch) = chip.cube.dim();
    let mut w = Writer(Vec::with_capacity(128 + 8 * rows * cols * (nch + 1)));
    w.header(KIND_CHIP);
    let mut flags = 0;
    if chip.calibrated {
        flags |= FLAG_CALIBRATED;
    }
    if chip.sza.is_some() {
        flags |= FLAG_SZA;
    }
    if chip.hrv.is_some() {
        flags |= FLAG_HRV;
    }
    w.u8(flags);
    w.i64(chip.id);
    w.u32(chip.num);
    w.str(&chip.name);
    w.f64(chip.centre[0]);
    w.f64(chip.centre[1]);
    w.f64(chip.latlon.lat);
    w.f64(chip.latlon.lon);
    w.0.extend_from_slice(chip.time.to_string().as_bytes());
    w.f64(chip.sza.unwrap_or(0.0));
    w.dim(rows)?;
    w.dim(cols)?;
    w.dim(nch)?;
    w.0.extend_from_slice(&chip.channels);
    for &v in chip.cube.iter() {
        w.f64(v);
    }
    for &m in chip.l2mask.iter() {
        w.f64(m as f64);
    }
    if let Some(h) = &chip.hrv {
        w.dim(h.nrows())?;
        w.dim(h.ncols())?;
        for &v in h.iter() {
            w.f64(v);
        }
    }
    Ok(w.0)
}

fn decode_chip(buf: &[u8]) -> Result<LandmarkChip, ArchiveError> {
    let mut r = Reader { buf, pos: 0 };
    let kind = r.header()?;
    if kind != KIND_CHIP {
        return Err(ArchiveError::MalformedContainer(format!(
            "expected chip container, found kind {kind}"
        )));
    }
    let flags = r.u8()?;
    let id = r.i64()?;
    let num = r.u32()?;
    let name = r.str()?;
    let centre = [r.f64()?, r.f64()?];
    let latlon = LatLon::new(r.f64()?, r.f64()?);
    let ts = std::str::from_utf8(r.take(14)?)
        .map_err(|_| ArchiveError::MalformedContainer("timestamp is not ASCII".into()))?;
    let time = AcqTime::parse(ts)?;
    let sza_raw = r.f64()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let nch = r.u32()? as usize;
    let channels = r.take(nch)?.to_vec();
    let cube = r.f64s(rows * cols * nch)?;
    let mask = r.f64s(rows * cols)?;
    let hrv = if flags & FLAG_HRV != 0 {
        let hr = r.u32()? as usize;
        let hc = r.u32()? as usize;
        let data = r.f64s(hr * hc)?;
        Some(Array2::from_shape_vec((hr, hc), data).expect("length checked by reader"))
    } else {
        None
    };
    r.finish()?;

    if rows == 0 || cols == 0 {
        return Err(ArchiveError::MalformedContainer(format!(
            "empty chip {rows}x{cols}"
        )));
    }
    let mut l2mask = Array2::<u8>::zeros((rows, cols));
    for (k, &v) in mask.iter().enumerate() {
        match PixelLabel::from_code(v) {
            Some(label) => l2mask[(k / cols, k % cols)] = label.code(),
            None => {
                return Err(ArchiveError::BadMaskCode {
                    row: k / cols,
                    col: k % cols,
                    value: v,
                })
            }
        }
    }
    let chip = LandmarkChip {
        id,
        num,
        name,
        centre,
        latlon,
        time,
        channels,
        cube: Array3::from_shape_vec((rows, cols, nch), cube).expect("length checked by reader"),
        l2mask,
        hrv,
        sza: (flags & FLAG_SZA != 0).then_some(sza_raw),
        calibrated: flags & FLAG_CALIBRATED != 0,
    };
    chip.validate()?;
    Ok(chip)
}

/// Reads and validates one chip container.
pub fn read_chip(path: impl AsRef<Path>) -> Result<LandmarkChip, ArchiveError> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| ArchiveError::io(path, e))?;
    decode_chip(&buf)
}

/// Writes a chip container. Output bytes are a pure function of the chip.
pub fn write_chip(chip: &LandmarkChip, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
    let path = path.as_ref();
    let bytes = encode_chip(chip)?;
    fs::write(path, bytes).map_err(|e| ArchiveError::io(path, e))
}

pub fn write_grid(grid: &Grid, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
    let path = path.as_ref();
    let (rows, cols) = grid.data.dim();
    let mut w = Writer(Vec::with_capacity(32 + grid.label.len() + 8 * rows * cols));
    w.header(KIND_GRID);
    w.str(&grid.label);
    w.dim(rows)?;
    w.dim(cols)?;
    for &v in grid.data.iter() {
        w.f64(v);
    }
    fs::write(path, w.0).map_err(|e| ArchiveError::io(path, e))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid, ArchiveError> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| ArchiveError::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let kind = r.header()?;
    if kind != KIND_GRID {
        return Err(ArchiveError::MalformedContainer(format!(
            "expected grid container, found kind {kind}"
        )));
    }
    let label = r.str()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f64s(rows * cols)?;
    r.finish()?;
    Ok(Grid {
        label,
        data: Array2::from_shape_vec((rows, cols), data).expect("length checked by reader"),
    })
}
