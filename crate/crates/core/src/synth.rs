//! Synthetic landmark archives with known cloud truth.
//!
//! Each landmark gets a static land/water layout with per-pixel texture.
//! Every acquisition draws a blobby cloud field (smoothed white noise cut at
//! a quantile), renders surface and cloud signals in physical units, adds
//! Gaussian noise and quantizes to 10-bit counts through the inverse of the
//! calibration. Solar channels follow the true solar zenith angle, so the
//! diurnal cycle and the illumination ranges are exercised.
//!
//! Noise is `noise` in reflectance units and `50 * noise` kelvin in thermal
//! channels. Clouds raise reflectance and lower brightness temperature by
//! `contrast` noise standard deviations, scaled per channel.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::archive::{
    scan_archive, write_chip, write_grid, AcqTime, ArchiveError, Grid, LandmarkChip, LandmarkRegistry, LatLon,
    ScanOptions, CHIP_EXT, GRID_EXT, N_CHANNELS, SEVIRI_CHANNELS,
};
use crate::masks::PixelLabel;
use crate::radiometry::{bt_to_radiance, is_solar, reflectance_to_radiance, CalibrationConfig, RadiometryError, MAX_COUNT};
use crate::rng;
use crate::solar::{sun_position, SolarError};

/// Kelvin of thermal noise per unit of reflectance noise.
pub const THERMAL_NOISE_SCALE: f64 = 50.0;
/// Per-chip coverages below this become exactly cloud-free.
const CLEAR_CUTOFF: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Radiometry(#[from] RadiometryError),
    #[error(transparent)]
    Solar(#[from] SolarError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Round island in open water.
    Island,
    /// Water on the left, land on the right, wavy shoreline.
    Coast,
    /// Round lake inside land.
    Lake,
}

impl Layout {
    pub const ALL: [Layout; 3] = [Layout::Island, Layout::Coast, Layout::Lake];

    pub fn name(self) -> &'static str {
        match self {
            Layout::Island => "island",
            Layout::Coast => "coast",
            Layout::Lake => "lake",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }

    /// `true` where the layout puts land.
    pub fn land(self, rows: usize, cols: usize) -> Array2<bool> {
        let (cr, cc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
        let radius = 0.3 * rows.min(cols) as f64;
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
            match self {
                Layout::Island => d <= radius,
                Layout::Lake => d > radius,
                Layout::Coast => c as f64 > cc + 1.5 * (r as f64 * 0.7).sin(),
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthLandmark {
    pub num: u32,
    pub id: i64,
    pub name: String,
    pub latlon: LatLon,
    pub layout: Layout,
}

/// `n` landmarks cycling through the three layouts at mid-latitude sites.
pub fn default_landmarks(n: usize) -> Vec<SynthLandmark> {
    const SITES: [(&str, f64, f64); 3] =
        [("island", 35.9, 14.4), ("coast", 39.47, -0.38), ("lake", 46.4, 6.5)];
    (0..n)
        .map(|i| {
            let (label, lat, lon) = SITES[i % 3];
            let shift = (i / 3) as f64;
            SynthLandmark {
                num: i as u32 + 1,
                id: 1000 + i as i64 + 1,
                name: format!("synthetic {label} {}", i + 1),
                latlon: LatLon::new(lat - 2.0 * shift, lon + 3.0 * shift),
                layout: Layout::ALL[i % 3],
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub landmarks: Vec<SynthLandmark>,
    pub rows: usize,
    pub cols: usize,
    pub start: NaiveDateTime,
    pub days: u32,
    /// Minutes between acquisitions; must divide a day.
    pub cadence_min: u32,
    /// Mean cloud fraction in `[0, 1]`.
    pub coverage: f64,
    /// Gaussian smoothing of the cloud field, pixels.
    pub blob_sigma: f64,
    /// Cloud signal in noise standard deviations.
    pub contrast: f64,
    /// Reflectance noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            landmarks: default_landmarks(2),
            rows: 16,
            cols: 16,
            start: NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date").and_hms_opt(0, 0, 0).expect("valid time"),
            days: 30,
            cadence_min: 15,
            coverage: 0.5,
            blob_sigma: 1.5,
            contrast: 5.0,
            noise: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.landmarks.is_empty() {
            return bad("no landmarks".into());
        }
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("chip size {}x{}", self.rows, self.cols));
        }
        if self.cadence_min == 0 || 1440 % self.cadence_min != 0 {
            return bad(format!("cadence {} min does not divide a day", self.cadence_min));
        }
        if self.days == 0 {
            return bad("zero days".into());
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return bad(format!("coverage {} outside [0, 1]", self.coverage));
        }
        if !(self.blob_sigma >= 0.0 && self.contrast >= 0.0 && self.noise >= 0.0) {
            return bad("blob size, contrast and noise must be non-negative".into());
        }
        let mut nums: Vec<u32> = self.landmarks.iter().map(|l| l.num).collect();
        nums.sort_unstable();
        nums.dedup();
        if nums.len() != self.landmarks.len() {
            return bad("duplicate landmark numbers".into());
        }
        if let Some(l) = self.landmarks.iter().find(|l| !l.latlon.is_valid()) {
            return bad(format!("landmark {} has invalid coordinates", l.num));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<NaiveDateTime> {
        let n = self.days as i64 * 1440 / self.cadence_min as i64;
        (0..n).map(|k| self.start + Duration::minutes(k * self.cadence_min as i64)).collect()
    }
}

/// Static per-landmark surface.
struct Surface {
    land: Array2<bool>,
    /// Clear-sky reflectance of channels 1–3.
    refl: Array3<f64>,
    /// Mean skin temperature, kelvin.
    temp: Array2<f64>,
}

const LAND_REFL: [f64; 3] = [0.12, 0.28, 0.30];
const WATER_REFL: [f64; 3] = [0.05, 0.03, 0.015];
/// Cloud reflectance signal per solar channel (in units of `contrast * noise`).
const CLOUD_REFL: [f64; 3] = [1.0, 1.0, 0.7];
/// Brightness temperature offset from the skin temperature, channels 4–11.
const ATMOSPHERE_K: [f64; 8] = [0.0, -55.0, -40.0, -2.0, -25.0, 0.0, -1.0, -25.0];
/// Cloud cooling per thermal channel (in units of `contrast * thermal noise`).
const CLOUD_COOLING: [f64; 8] = [2.0, 0.3, 0.5, 1.4, 0.8, 1.0, 0.6, 0.6];

fn surface(spec: &SynthSpec, lm: &SynthLandmark) -> Surface {
    let mut r = rng::stream(spec.seed, &[lm.num as u64, 0x5F]);
    let land = lm.layout.land(spec.rows, spec.cols);
    let refl = Array3::from_shape_fn((spec.rows, spec.cols, 3), |(i, j, k)| {
        let base = if land[(i, j)] { LAND_REFL[k] } else { WATER_REFL[k] };
        base * (1.0 + r.gen_range(-0.1..0.1))
    });
    let temp = Array2::from_shape_fn((spec.rows, spec.cols), |(i, j)| {
        (if land[(i, j)] { 293.0 } else { 290.0 }) + r.gen_range(-0.3..0.3)
    });
    Surface { land, refl, temp }
}

/// Separable Gaussian smoothing with border renormalization.
fn smooth(field: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return field.clone();
    }
    let half = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-half..=half).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let (rows, cols) = field.dim();
    let pass = |src: &Array2<f64>, along_rows: bool| {
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, &wk) in w.iter().enumerate() {
                let d = k as isize - half;
                let (rr, cc) = if along_rows { (r as isize + d, c as isize) } else { (r as isize, c as isize + d) };
                if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                    acc += wk * src[(rr as usize, cc as usize)];
                    norm += wk;
                }
            }
            acc / norm
        })
    };
    pass(&pass(field, true), false)
}

fn cloud_fraction(coverage: f64, r: &mut ChaCha8Rng) -> f64 {
    let u: f64 = r.gen_range(0.0..1.0);
    let f = if coverage <= 0.5 { 2.0 * coverage * u } else { 2.0 * coverage - 1.0 + (2.0 - 2.0 * coverage) * u };
    if f < CLEAR_CUTOFF {
        0.0
    } else {
        f
    }
}

/// Exactly `round(f * n)` pixels of a smoothed random field become cloud.
fn cloud_mask(spec: &SynthSpec, f: f64, r: &mut ChaCha8Rng) -> Array2<bool> {
    let n = spec.rows * spec.cols;
    let k = (f * n as f64).round() as usize;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let field = smooth(&Array2::from_shape_fn((spec.rows, spec.cols), |_| noise.sample(r)), spec.blob_sigma);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (va, vb) = (field.as_slice().expect("standard layout")[a], field.as_slice().expect("standard layout")[b]);
        vb.partial_cmp(&va).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut mask = Array2::from_elem((spec.rows, spec.cols), false);
    for &p in &order[..k] {
        mask[(p / spec.cols, p % spec.cols)] = true;
    }
    mask
}

fn to_count(radiance: f64, channel: u8, cal: &CalibrationConfig<f64>) -> Result<f64, RadiometryError> {
    let c = cal.channel(channel)?;
    Ok(((radiance - c.offset) / c.slope).round().clamp(0.0, MAX_COUNT as f64))
}

/// One raw-count chip plus its true cloud mask.
pub fn generate_chip(
    spec: &SynthSpec,
    lm: &SynthLandmark,
    index: usize,
    when: NaiveDateTime,
    cal: &CalibrationConfig<f64>,
) -> Result<(LandmarkChip, Array2<bool>), SynthError> {
    let surf = surface(spec, lm);
    generate_with_surface(spec, lm, &surf, index, when, cal)
}

fn generate_with_surface(
    spec: &SynthSpec,
    lm: &SynthLandmark,
    surf: &Surface,
    index: usize,
    when: NaiveDateTime,
    cal: &CalibrationConfig<f64>,
) -> Result<(LandmarkChip, Array2<bool>), SynthError> {
    let mut r = rng::stream(spec.seed, &[lm.num as u64, index as u64]);
    let f = cloud_fraction(spec.coverage, &mut r);
    let cloud = cloud_mask(spec, f, &mut r);
    let sza = sun_position(lm.latlon.lat, lm.latlon.lon, when)?.zenith;
    let time = AcqTime::from_datetime(when);
    let doy = time.day_of_year();

    // diurnal skin temperature cycle peaking at 14h local solar time
    let local_hour = (when.and_utc().timestamp().rem_euclid(86_400) as f64 / 3600.0 + lm.latlon.lon / 15.0).rem_euclid(24.0);
    let phase = (2.0 * std::f64::consts::PI * (local_hour - 14.0) / 24.0).cos();

    let sigma_r = spec.noise;
    let sigma_t = THERMAL_NOISE_SCALE * spec.noise;
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut cube = Array3::<f64>::zeros((spec.rows, spec.cols, N_CHANNELS));
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            let cl = cloud[(i, j)];
            let amplitude = if surf.land[(i, j)] { 2.0 } else { 0.5 };
            let skin = surf.temp[(i, j)] + amplitude * phase;
            for (k, &ch) in SEVIRI_CHANNELS.iter().enumerate() {
                let eps: f64 = gauss.sample(&mut r);
                let radiance = if is_solar(ch) {
                    let mut refl = surf.refl[(i, j, k)] + sigma_r * eps;
                    if cl {
                        refl += spec.contrast * sigma_r * CLOUD_REFL[k];
                    }
                    if sza < 90.0 {
                        reflectance_to_radiance(refl, ch, sza, doy, cal)?
                    } else {
                        0.0
                    }
                } else {
                    let t = k - 3;
                    let mut bt = skin + ATMOSPHERE_K[t] + sigma_t * eps;
                    if cl {
                        bt -= spec.contrast * sigma_t * CLOUD_COOLING[t];
                    }
                    bt_to_radiance(bt, ch, cal)?
                };
                cube[(i, j, k)] = to_count(radiance, ch, cal)?;
            }
        }
    }
    let l2mask = Array2::from_shape_fn((spec.rows, spec.cols), |(i, j)| {
        if cloud[(i, j)] {
            PixelLabel::Cloud.code()
        } else if surf.land[(i, j)] {
            PixelLabel::Land.code()
        } else {
            PixelLabel::Water.code()
        }
    });
    let chip = LandmarkChip {
        id: lm.id,
        num: lm.num,
        name: lm.name.clone(),
        centre: [(spec.rows as f64 - 1.0) / 2.0, (spec.cols as f64 - 1.0) / 2.0],
        latlon: lm.latlon,
        time,
        channels: SEVIRI_CHANNELS.to_vec(),
        cube,
        l2mask,
        hrv: None,
        sza: None,
        calibrated: false,
    };
    Ok((chip, cloud))
}

pub fn landmark_dir(out: &Path, num: u32) -> PathBuf {
    out.join(format!("lm{num:03}"))
}

pub fn chip_path(out: &Path, num: u32, time: &AcqTime) -> PathBuf {
    landmark_dir(out, num).join(format!("{time}.{CHIP_EXT}"))
}

pub fn truth_path(out: &Path, num: u32, time: &AcqTime) -> PathBuf {
    landmark_dir(out, num).join(format!("{time}.truth.{GRID_EXT}"))
}

/// Writes every chip and its truth grid under `out/lmNNN/` and returns the
/// registry of the written archive (nothing excluded).
pub fn generate_archive(
    spec: &SynthSpec,
    cal: &CalibrationConfig<f64>,
    out: impl AsRef<Path>,
) -> Result<LandmarkRegistry, SynthError> {
    spec.validate()?;
    let out = out.as_ref();
    let times = spec.times();
    for lm in &spec.landmarks {
        let dir = landmark_dir(out, lm.num);
        std::fs::create_dir_all(&dir).map_err(|e| SynthError::Io { path: dir.display().to_string(), source: e })?;
        let surf = surface(spec, lm);
        times.par_iter().enumerate().try_for_each(|(index, &when)| -> Result<(), SynthError> {
            let (chip, truth) = generate_with_surface(spec, lm, &surf, index, when, cal)?;
            write_chip(&chip, chip_path(out, lm.num, &chip.time))?;
            let grid = Grid { label: "truth cloud".into(), data: truth.mapv(|b| b as u8 as f64) };
            write_grid(&grid, truth_path(out, lm.num, &chip.time))?;
            Ok(())
        })?;
    }
    let opts = ScanOptions { excluded: Default::default(), ..Default::default() };
    Ok(scan_archive(out, &opts)?)
}
