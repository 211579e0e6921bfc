//! Archive discovery and landmark screening.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{read_chip, AcqTime, ArchiveError, LandmarkChip, LatLon, CHIP_EXT};
use crate::masks::PixelLabel;
use crate::partition::compute_sza_m;
use crate::solar::sun_position;

/// Landmarks dropped by default because their L2 masks use a different coding.
pub const DEFAULT_EXCLUDED: [u32; 2] = [91, 98];

pub const REASON_DEFAULT_LIST: &str = "excluded by default list";
pub const REASON_DIMENSIONS: &str = "inconsistent chip dimensions";
pub const REASON_NODATA: &str = "mask dominated by no-data";

#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Fraction of no-data mask pixels above which a landmark is excluded.
    pub nodata_threshold: f64,
    pub excluded: BTreeSet<u32>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            nodata_threshold: 0.5,
            excluded: DEFAULT_EXCLUDED.into_iter().collect(),
        }
    }
}

/// What the registry needs to know about one chip file.
#[derive(Debug, Clone, PartialEq)]
pub struct ChipSummary {
    pub path: PathBuf,
    pub id: i64,
    pub num: u32,
    pub name: String,
    pub latlon: LatLon,
    pub time: AcqTime,
    pub rows: usize,
    pub cols: usize,
    pub nodata_pixels: u64,
    pub sza: Option<f64>,
}

impl ChipSummary {
    pub fn from_chip(path: PathBuf, chip: &LandmarkChip) -> Self {
        let nodata = chip
            .l2mask
            .iter()
            .filter(|&&m| m == PixelLabel::NoData.code())
            .count() as u64;
        let sza = chip
            .sza
            .or_else(|| sun_position(chip.latlon.lat, chip.latlon.lon, chip.time.datetime()).ok().map(|p| p.zenith));
        ChipSummary {
            path,
            id: chip.id,
            num: chip.num,
            name: chip.name.clone(),
            latlon: chip.latlon,
            time: chip.time,
            rows: chip.rows(),
            cols: chip.cols(),
            nodata_pixels: nodata,
            sza,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub num: u32,
    pub id: i64,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub rows: usize,
    pub cols: usize,
    pub chip_count: usize,
    pub excluded: bool,
    pub reason: String,
    pub first_time: String,
    pub last_time: String,
    pub nodata_fraction: f64,
    pub sza_m: Option<f64>,
    /// Land-cover grid written by training, when available.
    pub landcover: Option<String>,
    #[serde(skip)]
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkRegistry {
    pub entries: BTreeMap<u32, RegistryEntry>,
    /// Files that could not be read as chips, with the reason.
    pub rejected: Vec<(PathBuf, String)>,
}

impl LandmarkRegistry {
    pub fn included(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values().filter(|e| !e.excluded)
    }

    /// Writes the registry as tab-separated text, one record per landmark.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(Vec::new());
        for e in self.entries.values() {
            w.serialize(e).map_err(|e| {
                ArchiveError::io(path, std::io::Error::other(e))
            })?;
        }
        let bytes = w.into_inner().map_err(|e| ArchiveError::io(path, e.into_error()))?;
        let mut f = std::fs::File::create(path).map_err(|e| ArchiveError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| ArchiveError::io(path, e))
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self, ArchiveError> {
        let path = path.as_ref();
        let mut r = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_path(path)
            .map_err(|e| ArchiveError::io(path, std::io::Error::other(e)))?;
        let mut entries = BTreeMap::new();
        for rec in r.deserialize::<RegistryEntry>() {
            let e = rec.map_err(|e| ArchiveError::MalformedContainer(format!("registry: {e}")))?;
            entries.insert(e.num, e);
        }
        Ok(LandmarkRegistry { entries, rejected: Vec::new() })
    }
}

/// Folds chip summaries into a registry. The result does not depend on the
/// order of `summaries`.
pub fn build_registry(mut summaries: Vec<ChipSummary>, opts: &ScanOptions) -> LandmarkRegistry {
    summaries.sort_by(|a, b| (a.num, a.time, &a.path).cmp(&(b.num, b.time, &b.path)));
    let mut groups: BTreeMap<u32, Vec<ChipSummary>> = BTreeMap::new();
    for s in summaries {
        groups.entry(s.num).or_default().push(s);
    }

    let entries = groups
        .into_iter()
        .map(|(num, chips)| {
            let first = &chips[0];
            let dims: BTreeSet<(usize, usize)> = chips.iter().map(|c| (c.rows, c.cols)).collect();
            let total_px: u64 = chips.iter().map(|c| (c.rows * c.cols) as u64).sum();
            let nodata: u64 = chips.iter().map(|c| c.nodata_pixels).sum();
            let nodata_fraction = nodata as f64 / total_px as f64;
            let szas: Vec<f64> = chips.iter().filter_map(|c| c.sza).collect();

            let reason = if opts.excluded.contains(&num) {
                REASON_DEFAULT_LIST
            } else if dims.len() > 1 {
                REASON_DIMENSIONS
            } else if nodata_fraction > opts.nodata_threshold {
                REASON_NODATA
            } else {
                ""
            };
            let entry = RegistryEntry {
                num,
                id: first.id,
                name: first.name.clone(),
                lat: first.latlon.lat,
                lon: first.latlon.lon,
                rows: first.rows,
                cols: first.cols,
                chip_count: chips.len(),
                excluded: !reason.is_empty(),
                reason: reason.to_string(),
                first_time: first.time.to_string(),
                last_time: chips[chips.len() - 1].time.to_string(),
                nodata_fraction,
                sza_m: compute_sza_m(&szas).ok(),
                landcover: None,
                paths: chips.into_iter().map(|c| c.path).collect(),
            };
            (num, entry)
        })
        .collect();
    LandmarkRegistry { entries, rejected: Vec::new() }
}

fn chip_files(root: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x == CHIP_EXT))
        .collect();
    files.sort();
    files
}

/// Scans `root` recursively for chip containers and builds the registry.
pub fn scan_archive(root: impl AsRef<Path>, opts: &ScanOptions) -> Result<LandmarkRegistry, ArchiveError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(ArchiveError::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "archive root is not a directory"),
        ));
    }
    let files = chip_files(root);
    let results: Vec<(PathBuf, Result<ChipSummary, ArchiveError>)> = files
        .into_par_iter()
        .map(|p| {
            let r = read_chip(&p).map(|c| ChipSummary::from_chip(p.clone(), &c));
            (p, r)
        })
        .collect();

    let mut summaries = Vec::with_capacity(results.len());
    let mut rejected = Vec::new();
    for (p, r) in results {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                rejected.push((p, e.to_string()));
            }
        }
    }
    if summaries.is_empty() {
        return Err(ArchiveError::EmptyArchive(root.display().to_string()));
    }
    let mut reg = build_registry(summaries, opts);
    reg.rejected = rejected;
    Ok(reg)
}

/// Loads every chip of one landmark, in acquisition order.
pub fn load_landmark_chips(entry: &RegistryEntry) -> Result<Vec<LandmarkChip>, ArchiveError> {
    let mut chips = entry
        .paths
        .par_iter()
        .map(read_chip)
        .collect::<Result<Vec<_>, _>>()?;
    chips.sort_by_key(|c| c.time);
    Ok(chips)
}
