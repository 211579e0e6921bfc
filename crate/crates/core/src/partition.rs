//! Four-way illumination split driven by the solar zenith angle.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::archive::LandmarkChip;
use crate::features::Regime;
use crate::num::Real;

/// Upper SZA bound of daytime ranges used for the median split.
pub const LOW_LIGHT_SZA: f64 = 80.0;
pub const NIGHT_SZA: f64 = 90.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PartitionError {
    #[error("no daytime chips (0 < sza < 80) to compute the median threshold")]
    NoDaytimeChips,
    #[error("median threshold {0} outside (0, 80)")]
    InvalidThreshold(f64),
    #[error("chip {0} has no solar zenith angle")]
    MissingSza(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IlluminationRange {
    High,
    Medium,
    Low,
    Night,
}

impl IlluminationRange {
    pub const ALL: [IlluminationRange; 4] = [
        IlluminationRange::High,
        IlluminationRange::Medium,
        IlluminationRange::Low,
        IlluminationRange::Night,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            IlluminationRange::High => "high",
            IlluminationRange::Medium => "medium",
            IlluminationRange::Low => "low",
            IlluminationRange::Night => "night",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }

    pub fn regime(self) -> Regime {
        match self {
            IlluminationRange::Night => Regime::Night,
            _ => Regime::Day,
        }
    }
}

impl std::fmt::Display for IlluminationRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per illumination range.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerRange<T>(pub [T; 4]);

impl<T> PerRange<T> {
    pub fn from_fn(mut f: impl FnMut(IlluminationRange) -> T) -> Self {
        PerRange(IlluminationRange::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (IlluminationRange, &T)> {
        IlluminationRange::ALL.into_iter().zip(self.0.iter())
    }

    pub fn map<U>(self, mut f: impl FnMut(IlluminationRange, T) -> U) -> PerRange<U> {
        let mut k = 0;
        PerRange(self.0.map(|v| {
            let r = IlluminationRange::ALL[k];
            k += 1;
            f(r, v)
        }))
    }
}

impl<T> Index<IlluminationRange> for PerRange<T> {
    type Output = T;
    fn index(&self, r: IlluminationRange) -> &T {
        &self.0[r.index()]
    }
}

impl<T> IndexMut<IlluminationRange> for PerRange<T> {
    fn index_mut(&mut self, r: IlluminationRange) -> &mut T {
        &mut self.0[r.index()]
    }
}

/// Landmark-specific median threshold plus the fixed 80°/90° bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SzaThresholds<T> {
    pub sza_m: T,
}

impl<T: Real> SzaThresholds<T> {
    pub fn new(sza_m: T) -> Result<Self, PartitionError> {
        if sza_m > T::zero() && sza_m < T::lit(LOW_LIGHT_SZA) {
            Ok(SzaThresholds { sza_m })
        } else {
            Err(PartitionError::InvalidThreshold(sza_m.as_f64()))
        }
    }
}

/// Median of the daytime angles (0 < sza < 80); mean of the middle pair for
/// an even count.
pub fn compute_sza_m<T: Real>(szas: &[T]) -> Result<T, PartitionError> {
    let mut day: Vec<T> = szas
        .iter()
        .copied()
        .filter(|&s| s > T::zero() && s < T::lit(LOW_LIGHT_SZA))
        .collect();
    if day.is_empty() {
        return Err(PartitionError::NoDaytimeChips);
    }
    day.sort_by(|a, b| a.partial_cmp(b).expect("filtered values are not NaN"));
    let n = day.len();
    Ok(if n % 2 == 1 {
        day[n / 2]
    } else {
        (day[n / 2 - 1] + day[n / 2]) / T::lit(2.0)
    })
}

/// Half-open ranges: high `[0, sza_m)`, medium `[sza_m, 80)`, low `[80, 90)`,
/// night `[90, ..)`.
pub fn assign_range<T: Real>(sza: T, thresholds: &SzaThresholds<T>) -> IlluminationRange {
    if sza >= T::lit(NIGHT_SZA) {
        IlluminationRange::Night
    } else if sza >= T::lit(LOW_LIGHT_SZA) {
        IlluminationRange::Low
    } else if sza >= thresholds.sza_m {
        IlluminationRange::Medium
    } else {
        IlluminationRange::High
    }
}

/// Splits annotated chips into the four ranges, keeping input order within
/// each range.
pub fn partition_archive(
    chips: Vec<LandmarkChip>,
    thresholds: &SzaThresholds<f64>,
) -> Result<PerRange<Vec<LandmarkChip>>, PartitionError> {
    let mut out = PerRange::<Vec<LandmarkChip>>::default();
    for chip in chips {
        let sza = chip
            .sza
            .ok_or_else(|| PartitionError::MissingSza(chip.time.to_string()))?;
        out[assign_range(sza, thresholds)].push(chip);
    }
    Ok(out)
}
