//! Balanced, stratified train/test pixel sets for one (landmark, range) pair.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{AcqTime, LandmarkChip};
use crate::features::{extract_features, read_feature_table, write_feature_table, FeatureError, Regime};
use crate::masks::{chip_labels, screen_labels, CoastlineMask, CoverStratum, LandCoverMask, MaskError, PixelLabel};
use crate::rng;

/// Pools smaller than `n_train + POOL_MARGIN` fall back to degraded sizes.
pub const POOL_MARGIN: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("no labelled pixels available")]
    EmptyPool,
    #[error("sample sizes must be positive (train {n_train}, test {n_test})")]
    InvalidSpec { n_train: usize, n_test: usize },
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Masks(#[from] MaskError),
    #[error("sample set {path}: {msg}")]
    SetFile { path: String, msg: String },
}

/// Traceability key of a pixel: acquisition time plus coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelKey {
    pub time: AcqTime,
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub month: u8,
    pub cover: CoverStratum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPixel {
    pub features: Vec<f64>,
    pub cloud: bool,
    pub stratum: Stratum,
    pub key: PixelKey,
    pub sza: f64,
    /// Cloud label on the coastline band.
    pub suspect: bool,
    /// A feature was guarded or missing.
    pub flagged: bool,
}

impl LabeledPixel {
    pub fn trainable(&self) -> bool {
        !self.suspect && !self.flagged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { n_train: 10_000, n_test: 100_000, seed: 0 }
    }
}

/// Every non-nodata pixel of the given chips, in chip order then row-major.
/// Suspect and flagged pixels are kept and marked; [`draw_balanced`] keeps
/// them out of the training set.
pub fn collect_labeled(
    chips: &[LandmarkChip],
    regime: Regime,
    lc: &LandCoverMask,
    coast: &CoastlineMask,
) -> Result<Vec<LabeledPixel>, SamplingError> {
    let per_chip = chips
        .par_iter()
        .map(|chip| -> Result<Vec<LabeledPixel>, SamplingError> {
            let fg = extract_features(chip, regime)?;
            let screen = screen_labels(chip, coast)?;
            let labels = chip_labels(chip);
            let sza = chip.sza.ok_or(FeatureError::MissingSza)?;
            let month = chip.time.month() as u8;
            let mut out = Vec::new();
            for ((r, c), &label) in labels.indexed_iter() {
                if screen.drop[(r, c)] {
                    continue;
                }
                out.push(LabeledPixel {
                    features: fg.pixel(r, c).to_vec(),
                    cloud: label == PixelLabel::Cloud,
                    stratum: Stratum { month, cover: coast.stratum(lc, r, c) },
                    key: PixelKey { time: chip.time, row: r as u32, col: c as u32 },
                    sza,
                    suspect: screen.suspect[(r, c)],
                    flagged: fg.flagged[(r, c)],
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pool: Vec<LabeledPixel> = per_chip.into_iter().flatten().collect();
    if pool.is_empty() {
        return Err(SamplingError::EmptyPool);
    }
    Ok(pool)
}

/// Indices into the pool, both sorted ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Draw {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Splits `quota` over bins with the given supplies as evenly as supply
/// allows: repeated equal shares, capped at supply, with the remainder of each
/// round handed out one by one in bin order.
pub fn water_fill(quota: usize, supply: &[usize]) -> Vec<usize> {
    let mut take = vec![0; supply.len()];
    let mut left = quota.min(supply.iter().sum());
    while left > 0 {
        let open: Vec<usize> = (0..supply.len()).filter(|&k| take[k] < supply[k]).collect();
        let share = left / open.len();
        if share == 0 {
            for &k in open.iter().take(left) {
                take[k] += 1;
            }
            break;
        }
        for &k in &open {
            let add = share.min(supply[k] - take[k]);
            take[k] += add;
            left -= add;
        }
    }
    take
}

/// Balanced stratified training draw plus a uniform test draw from the rest.
pub fn draw_balanced(pool: &[LabeledPixel], spec: &SampleSpec) -> Result<Draw, SamplingError> {
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(SamplingError::InvalidSpec { n_train: spec.n_train, n_test: spec.n_test });
    }
    if pool.is_empty() {
        return Err(SamplingError::EmptyPool);
    }
    let mut warnings = Vec::new();
    let mut n_train = spec.n_train;
    if pool.len() < spec.n_train + POOL_MARGIN {
        n_train = pool.len() / 2;
        warnings.push(format!(
            "pool of {} pixels is smaller than n_train + {POOL_MARGIN}; training size reduced to {n_train}",
            pool.len()
        ));
    }

    // (class, stratum) -> eligible pool indices, in pool order
    let mut bins: BTreeMap<(bool, Stratum), Vec<usize>> = BTreeMap::new();
    for (i, p) in pool.iter().enumerate() {
        if p.trainable() {
            bins.entry((p.cloud, p.stratum)).or_default().push(i);
        }
    }
    let supply_of = |cloud: bool| -> usize {
        bins.iter().filter(|((c, _), _)| *c == cloud).map(|(_, v)| v.len()).sum()
    };
    let (sup_cloud, sup_clear) = (supply_of(true), supply_of(false));
    let half = n_train / 2;
    let mut q_cloud = (n_train - half).min(sup_cloud);
    let q_clear = (n_train - q_cloud).min(sup_clear);
    q_cloud = (n_train - q_clear).min(sup_cloud);
    if q_cloud + q_clear < n_train {
        warnings.push(format!(
            "only {} trainable pixels for a training size of {n_train}",
            q_cloud + q_clear
        ));
    }
    if q_cloud.abs_diff(q_clear) > 1 {
        warnings.push(format!("class imbalance in training set: {q_cloud} cloud, {q_clear} clear"));
    }

    let mut train = Vec::with_capacity(q_cloud + q_clear);
    for (cloud, quota) in [(true, q_cloud), (false, q_clear)] {
        let keys: Vec<&(bool, Stratum)> = bins.keys().filter(|(c, _)| *c == cloud).collect();
        let supply: Vec<usize> = keys.iter().map(|k| bins[*k].len()).collect();
        let take = water_fill(quota, &supply);
        for (key, &n) in keys.iter().zip(&take) {
            let (c, s) = **key;
            let mut idx = bins[*key].clone();
            let mut stream = rng::stream(spec.seed, &[0x7EA1, c as u64, s.month as u64, s.cover as u64]);
            partial_shuffle(&mut idx, n, &mut stream);
            train.extend_from_slice(&idx[..n]);
        }
    }
    train.sort_unstable();

    let in_train: BTreeSet<usize> = train.iter().copied().collect();
    let mut rest: Vec<usize> = (0..pool.len()).filter(|i| !in_train.contains(i)).collect();
    let n_test = spec.n_test.min(rest.len());
    if n_test < spec.n_test {
        warnings.push(format!("test size reduced to {n_test} (requested {})", spec.n_test));
    }
    let mut stream = rng::stream(spec.seed, &[0x7E57]);
    partial_shuffle(&mut rest, n_test, &mut stream);
    let mut test = rest[..n_test].to_vec();
    test.sort_unstable();

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Draw { train, test, warnings })
}

/// Moves a uniform random `k`-subset to the front of `items`.
fn partial_shuffle<T, R: Rng>(items: &mut [T], k: usize, rng: &mut R) {
    let n = items.len();
    for i in 0..k.min(n) {
        let j = rng.gen_range(i..n);
        items.swap(i, j);
    }
}

pub fn feature_matrix(pool: &[LabeledPixel], idx: &[usize], dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), dim), |(i, j)| pool[idx[i]].features[j])
}

pub fn labels(pool: &[LabeledPixel], idx: &[usize]) -> Vec<i8> {
    idx.iter().map(|&i| if pool[i].cloud { 1 } else { -1 }).collect()
}

/// A drawn pixel set detached from its pool: raw (unscaled) features plus
/// per-pixel metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub regime: Regime,
    pub features: Array2<f64>,
    pub meta: Vec<PixelMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMeta {
    pub key: PixelKey,
    pub stratum: Stratum,
    pub cloud: bool,
    pub suspect: bool,
    pub flagged: bool,
    pub sza: f64,
}

impl From<&LabeledPixel> for PixelMeta {
    fn from(p: &LabeledPixel) -> Self {
        PixelMeta { key: p.key, stratum: p.stratum, cloud: p.cloud, suspect: p.suspect, flagged: p.flagged, sza: p.sza }
    }
}

#[derive(Serialize, Deserialize)]
struct KeyRecord {
    time: AcqTime,
    row: u32,
    col: u32,
    month: u8,
    cover: String,
    cloud: u8,
    suspect: u8,
    flagged: u8,
    sza: String,
}

impl SampleSet {
    pub fn from_pool(pool: &[LabeledPixel], idx: &[usize], regime: Regime) -> Self {
        SampleSet {
            regime,
            features: feature_matrix(pool, idx, regime.dim()),
            meta: idx.iter().map(|&i| PixelMeta::from(&pool[i])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn labels(&self) -> Vec<i8> {
        self.meta.iter().map(|m| if m.cloud { 1 } else { -1 }).collect()
    }

    /// Writes `<stem>.ftab` (feature table) and `<stem>.keys.tsv`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<(), SamplingError> {
        let dir = dir.as_ref();
        write_feature_table(dir.join(format!("{stem}.ftab")), self.features.view(), self.regime)?;
        let path = dir.join(format!("{stem}.keys.tsv"));
        let err = |e: &dyn std::fmt::Display| SamplingError::SetFile { path: path.display().to_string(), msg: e.to_string() };
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_path(&path).map_err(|e| err(&e))?;
        for m in &self.meta {
            w.serialize(KeyRecord {
                time: m.key.time,
                row: m.key.row,
                col: m.key.col,
                month: m.stratum.month,
                cover: m.stratum.cover.name().to_string(),
                cloud: m.cloud as u8,
                suspect: m.suspect as u8,
                flagged: m.flagged as u8,
                sza: crate::num::fmt_exact(m.sza),
            })
            .map_err(|e| err(&e))?;
        }
        w.flush().map_err(|e| err(&e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self, SamplingError> {
        let dir = dir.as_ref();
        let (features, regime) = read_feature_table(dir.join(format!("{stem}.ftab")))?;
        let path = dir.join(format!("{stem}.keys.tsv"));
        let err = |msg: String| SamplingError::SetFile { path: path.display().to_string(), msg };
        let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_path(&path).map_err(|e| err(e.to_string()))?;
        let mut meta = Vec::new();
        for rec in r.deserialize::<KeyRecord>() {
            let k = rec.map_err(|e| err(e.to_string()))?;
            let cover = CoverStratum::parse(&k.cover).ok_or_else(|| err(format!("unknown cover {:?}", k.cover)))?;
            let sza = k.sza.parse::<f64>().map_err(|e| err(e.to_string()))?;
            meta.push(PixelMeta {
                key: PixelKey { time: k.time, row: k.row, col: k.col },
                stratum: Stratum { month: k.month, cover },
                cloud: k.cloud != 0,
                suspect: k.suspect != 0,
                flagged: k.flagged != 0,
                sza,
            });
        }
        if meta.len() != features.nrows() {
            return Err(err(format!("{} keys for {} feature rows", meta.len(), features.nrows())));
        }
        Ok(SampleSet { regime, features, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::{LatLon, SEVIRI_CHANNELS};
    use crate::masks::{coastline_from_landcover, Cover};
    use ndarray::Array3;

    fn calibrated_chip(mask: Array2<u8>, sza: f64) -> LandmarkChip {
        let (rows, cols) = mask.dim();
        LandmarkChip {
            id: 7,
            num: 7,
            name: "fixture".into(),
            centre: [0.0, 0.0],
            latlon: LatLon::new(39.0, 0.0),
            time: AcqTime::parse("20100415103000").unwrap(),
            channels: SEVIRI_CHANNELS.to_vec(),
            cube: Array3::from_shape_fn((rows, cols, 11), |(r, c, k)| {
                if k < 3 {
                    0.1 + 0.05 * k as f64 + 0.01 * (r + c) as f64
                } else {
                    280.0 + k as f64
                }
            }),
            l2mask: mask,
            hrv: None,
            sza: Some(sza),
            calibrated: true,
        }
    }

    fn masks_for(grid: Array2<Cover>) -> (LandCoverMask, CoastlineMask) {
        let lc = LandCoverMask { grid, votes: 1 };
        let coast = coastline_from_landcover(&lc);
        (lc, coast)
    }

    #[test]
    fn nodata_is_dropped_and_strata_assigned() {
        let chip = calibrated_chip(ndarray::array![[50, 100], [200, 0]], 30.0);
        let (lc, coast) = masks_for(Array2::from_elem((2, 2), Cover::Water));
        let pool = collect_labeled(&[chip], Regime::Day, &lc, &coast).unwrap();
        assert_eq!(pool.len(), 3);
        let cloud = pool.iter().find(|p| p.cloud).unwrap();
        assert_eq!(cloud.stratum, Stratum { month: 4, cover: CoverStratum::Water });
        assert_eq!((cloud.key.row, cloud.key.col), (1, 0));
        assert!(!cloud.suspect);
        assert_eq!(cloud.features.len(), 16);
    }

    #[test]
    fn coastline_cloud_is_test_only() {
        let mut grid = Array2::from_elem((3, 3), Cover::Water);
        grid[(1, 1)] = Cover::Land;
        let (lc, coast) = masks_for(grid);
        let mut mask = Array2::from_elem((3, 3), 50u8);
        mask[(1, 1)] = 200;
        let chip = calibrated_chip(mask, 95.0);
        let pool = collect_labeled(&[chip], Regime::Night, &lc, &coast).unwrap();
        let suspect: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].suspect).collect();
        assert_eq!(suspect.len(), 1);
        let draw = draw_balanced(&pool, &SampleSpec { n_train: 4, n_test: 100, seed: 1 }).unwrap();
        assert!(!draw.train.contains(&suspect[0]));
        assert!(draw.test.contains(&suspect[0]));
    }

    #[test]
    fn regime_mismatch_propagates() {
        let chip = calibrated_chip(Array2::from_elem((2, 2), 50), 95.0);
        let (lc, coast) = masks_for(Array2::from_elem((2, 2), Cover::Water));
        assert!(matches!(
            collect_labeled(&[chip], Regime::Day, &lc, &coast),
            Err(SamplingError::Features(FeatureError::RegimeMismatch { .. }))
        ));
    }

    fn pool_from(spec: &[(u8, CoverStratum, bool, usize)]) -> Vec<LabeledPixel> {
        let mut out = Vec::new();
        let mut n = 0u32;
        for &(month, cover, cloud, count) in spec {
            for _ in 0..count {
                out.push(LabeledPixel {
                    features: vec![n as f64],
                    cloud,
                    stratum: Stratum { month, cover },
                    key: PixelKey {
                        time: AcqTime::parse(&format!("2010{month:02}01000000")).unwrap(),
                        row: n / 1000,
                        col: n % 1000,
                    },
                    sza: 30.0,
                    suspect: false,
                    flagged: false,
                });
                n += 1;
            }
        }
        out
    }

    fn count(pool: &[LabeledPixel], idx: &[usize], f: impl Fn(&LabeledPixel) -> bool) -> usize {
        idx.iter().filter(|&&i| f(&pool[i])).count()
    }

    #[test]
    fn ample_supply_is_exactly_balanced() {
        let mut spec = Vec::new();
        for m in 1..=12 {
            for cover in CoverStratum::ALL {
                spec.push((m, cover, true, 40));
                spec.push((m, cover, false, 40));
            }
        }
        let pool = pool_from(&spec);
        let draw = draw_balanced(&pool, &SampleSpec { n_train: 960, n_test: 500, seed: 5 }).unwrap();
        assert_eq!(draw.train.len(), 960);
        assert_eq!(count(&pool, &draw.train, |p| p.cloud), 480);
        for m in 1..=12 {
            for cover in CoverStratum::ALL {
                let s = Stratum { month: m, cover };
                assert_eq!(count(&pool, &draw.train, |p| p.stratum == s && p.cloud), 10);
                assert_eq!(count(&pool, &draw.train, |p| p.stratum == s && !p.cloud), 10);
            }
        }
        assert_eq!(draw.test.len(), 500);
        assert!(draw.warnings.is_empty());
        let train: BTreeSet<PixelKey> = draw.train.iter().map(|&i| pool[i].key).collect();
        assert!(draw.test.iter().all(|&i| !train.contains(&pool[i].key)));
    }

    #[test]
    fn missing_cloud_stratum_is_redistributed() {
        let pool = pool_from(&[
            (1, CoverStratum::Land, true, 500),
            (1, CoverStratum::Land, false, 500),
            (1, CoverStratum::Water, false, 500),
            (2, CoverStratum::Land, true, 500),
            (2, CoverStratum::Land, false, 500),
        ]);
        let draw = draw_balanced(&pool, &SampleSpec { n_train: 600, n_test: 100, seed: 9 }).unwrap();
        assert_eq!(draw.train.len(), 600);
        assert_eq!(count(&pool, &draw.train, |p| p.cloud), 300);
        assert_eq!(count(&pool, &draw.train, |p| p.stratum.month == 1 && p.cloud), 150);
        assert_eq!(count(&pool, &draw.train, |p| p.stratum.month == 2 && p.cloud), 150);
        assert_eq!(count(&pool, &draw.train, |p| !p.cloud && p.stratum.cover == CoverStratum::Water), 100);
    }

    #[test]
    fn short_class_supply_is_filled_by_the_other_class() {
        let pool = pool_from(&[(3, CoverStratum::Land, true, 50), (3, CoverStratum::Land, false, 2000)]);
        let draw = draw_balanced(&pool, &SampleSpec { n_train: 400, n_test: 100, seed: 2 }).unwrap();
        assert_eq!(draw.train.len(), 400);
        assert_eq!(count(&pool, &draw.train, |p| p.cloud), 50);
        assert!(!draw.warnings.is_empty());
    }

    #[test]
    fn small_pool_degrades_with_warning() {
        let pool = pool_from(&[(1, CoverStratum::Land, true, 60), (1, CoverStratum::Land, false, 60)]);
        let draw = draw_balanced(&pool, &SampleSpec { n_train: 100, n_test: 1000, seed: 2 }).unwrap();
        assert_eq!(draw.train.len(), 60);
        assert_eq!(draw.test.len(), 60);
        assert!(draw.warnings.len() >= 2);
        assert!(matches!(draw_balanced(&[], &SampleSpec::default()), Err(SamplingError::EmptyPool)));
    }

    #[test]
    fn draws_are_reproducible_and_seed_dependent() {
        let pool = pool_from(&[(1, CoverStratum::Land, true, 300), (2, CoverStratum::Water, false, 300)]);
        let spec = SampleSpec { n_train: 100, n_test: 50, seed: 77 };
        let a = draw_balanced(&pool, &spec).unwrap();
        assert_eq!(a, draw_balanced(&pool, &spec).unwrap());
        let b = draw_balanced(&pool, &SampleSpec { seed: 78, ..spec }).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn water_fill_examples() {
        assert_eq!(water_fill(10, &[100, 100, 100]), vec![4, 3, 3]);
        assert_eq!(water_fill(10, &[1, 100, 100]), vec![1, 5, 4]);
        assert_eq!(water_fill(10, &[1, 2, 3]), vec![1, 2, 3]);
        assert_eq!(water_fill(0, &[5]), vec![0]);
    }

    #[test]
    fn sample_sets_round_trip() {
        let pool = pool_from(&[(1, CoverStratum::CoastLand, true, 5), (2, CoverStratum::Water, false, 5)]);
        let mut pool = pool;
        for p in &mut pool {
            p.features = vec![p.features[0]; 6];
            p.sza = 91.0 + p.features[0] / 3.0;
        }
        let set = SampleSet::from_pool(&pool, &[0, 3, 7], Regime::Night);
        let dir = tempfile::tempdir().unwrap();
        set.save(dir.path(), "night").unwrap();
        assert_eq!(SampleSet::load(dir.path(), "night").unwrap(), set);
    }
}
