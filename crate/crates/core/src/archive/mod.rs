//! Landmark chip data model, the on-disk chip container, and archive scanning.

mod container;
mod registry;

use std::fmt;

use chrono::{Datelike, NaiveDateTime};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::masks::PixelLabel;

pub use container::{read_chip, read_grid, write_chip, write_grid, Grid, CHIP_EXT, GRID_EXT};
pub use registry::{
    build_registry, load_landmark_chips, scan_archive, ChipSummary, LandmarkRegistry,
    RegistryEntry, ScanOptions, DEFAULT_EXCLUDED,
};

/// Number of SEVIRI channels kept in the cube (HRV excluded).
pub const N_CHANNELS: usize = 11;

/// SEVIRI channel numbers stored in the cube, in cube order.
pub const SEVIRI_CHANNELS: [u8; N_CHANNELS] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed container: {0}")]
    MalformedContainer(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("bad mask code {value} at pixel ({row},{col})")]
    BadMaskCode { row: usize, col: usize, value: f64 },
    #[error("invalid chip: {0}")]
    InvalidChip(String),
    #[error("bad timestamp {0:?}, expected YYYYMMDDhhmmss")]
    BadTimestamp(String),
    #[error("no chips found under {0}")]
    EmptyArchive(String),
}

impl ArchiveError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        ArchiveError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// UTC acquisition time at one-second resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AcqTime(NaiveDateTime);

impl AcqTime {
    pub const FORMAT: &'static str = "%Y%m%d%H%M%S";

    pub fn parse(s: &str) -> Result<Self, ArchiveError> {
        if s.len() != 14 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ArchiveError::BadTimestamp(s.to_string()));
        }
        NaiveDateTime::parse_from_str(s, Self::FORMAT)
            .map(AcqTime)
            .map_err(|_| ArchiveError::BadTimestamp(s.to_string()))
    }

    pub fn from_datetime(dt: NaiveDateTime) -> Self {
        use chrono::Timelike;
        AcqTime(dt.with_nanosecond(0).unwrap_or(dt))
    }

    pub fn datetime(&self) -> NaiveDateTime {
        self.0
    }

    /// Calendar month, 1–12.
    pub fn month(&self) -> u32 {
        self.0.month()
    }

    /// Day of year, 1–366.
    pub fn day_of_year(&self) -> u32 {
        self.0.ordinal()
    }
}

impl fmt::Display for AcqTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(Self::FORMAT))
    }
}

impl TryFrom<String> for AcqTime {
    type Error = ArchiveError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        AcqTime::parse(&s)
    }
}

impl From<AcqTime> for String {
    fn from(t: AcqTime) -> String {
        t.to_string()
    }
}

/// Geographic position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// One acquisition of one landmark.
///
/// `cube` is `[rows, cols, 11]` in SEVIRI channel order 1..=11. It holds raw
/// level-1.5 counts until [`crate::radiometry::calibrate_chip`] converts it to
/// reflectance (channels 1–3) and brightness temperature (channels 4–11).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkChip {
    pub id: i64,
    pub num: u32,
    pub name: String,
    pub centre: [f64; 2],
    pub latlon: LatLon,
    pub time: AcqTime,
    pub channels: Vec<u8>,
    pub cube: Array3<f64>,
    pub l2mask: Array2<u8>,
    /// High-resolution visible grid. Carried through the container, never used.
    pub hrv: Option<Array2<f64>>,
    /// Solar zenith angle at the chip centre, degrees.
    pub sza: Option<f64>,
    pub calibrated: bool,
}

impl LandmarkChip {
    pub fn rows(&self) -> usize {
        self.l2mask.nrows()
    }

    pub fn cols(&self) -> usize {
        self.l2mask.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    /// Checks every structural invariant of the record.
    pub fn validate(&self) -> Result<(), ArchiveError> {
        let (r, c, d) = self.cube.dim();
        if r == 0 || c == 0 {
            return Err(ArchiveError::InvalidChip(format!("empty chip {r}x{c}")));
        }
        if (r, c) != self.l2mask.dim() {
            return Err(ArchiveError::DimensionMismatch(format!(
                "cube {r}x{c} vs mask {}x{}",
                self.l2mask.nrows(),
                self.l2mask.ncols()
            )));
        }
        if d != N_CHANNELS || self.channels.len() != N_CHANNELS {
            return Err(ArchiveError::DimensionMismatch(format!(
                "expected {N_CHANNELS} channels, cube has {d}, channel list has {}",
                self.channels.len()
            )));
        }
        if let Some(((row, col), &v)) = self
            .l2mask
            .indexed_iter()
            .find(|(_, &v)| PixelLabel::from_code(v as f64).is_none())
        {
            return Err(ArchiveError::BadMaskCode { row, col, value: v as f64 });
        }
        if !self.latlon.is_valid() {
            return Err(ArchiveError::InvalidChip(format!(
                "latlon out of range: {:?}",
                self.latlon
            )));
        }
        if self.name.contains(['\t', '\n']) {
            return Err(ArchiveError::InvalidChip("name contains tab or newline".into()));
        }
        Ok(())
    }
}
