//! Per-pixel descriptors: calibrated channels, spectral indices and windowed
//! spatial statistics, plus the per-classifier 0–1 scaler.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::archive::LandmarkChip;
use crate::num::Real;
use crate::radiometry::INVALID;

/// Denominators below this magnitude zero the ratio and flag the pixel.
pub const RATIO_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("chip regime mismatch: sza {sza} is not {regime:?}")]
    RegimeMismatch { sza: f64, regime: Regime },
    #[error("chip is not calibrated")]
    UncalibratedChip,
    #[error("chip has no solar zenith angle")]
    MissingSza,
    #[error("no rows to fit")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    Day,
    Night,
}

impl Regime {
    pub fn dim(self) -> usize {
        match self {
            Regime::Day => DAY_FEATURES.len(),
            Regime::Night => NIGHT_FEATURES.len(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Day => "day",
            Regime::Night => "night",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "day" => Some(Regime::Day),
            "night" => Some(Regime::Night),
            _ => None,
        }
    }

    pub fn for_sza(sza: f64) -> Regime {
        if sza < 90.0 {
            Regime::Day
        } else {
            Regime::Night
        }
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            Regime::Day => &DAY_FEATURES,
            Regime::Night => &NIGHT_FEATURES,
        }
    }
}

pub const DAY_FEATURES: [&str; 16] = [
    "R1_vis06",
    "R2_vis08",
    "R3_nir16",
    "R4_ir39",
    "BT7_ir87",
    "BT9_ir108",
    "BT10_ir120",
    "cloud_test",
    "snow_test",
    "ndvi",
    "mean3_R1",
    "std3_R1",
    "mean5_R1",
    "std5_R1",
    "mean3_BT9",
    "std3_BT9",
];

/// Thermal subset available at night (day features 4–7, 15, 16).
pub const NIGHT_FEATURES: [&str; 6] = [
    "R4_ir39",
    "BT7_ir87",
    "BT9_ir108",
    "BT10_ir120",
    "mean3_BT9",
    "std3_BT9",
];

// cube channel indices (SEVIRI channel number - 1)
const R1: usize = 0;
const R2: usize = 1;
const R3: usize = 2;
const R4: usize = 3;
const BT7: usize = 6;
const BT9: usize = 8;
const BT10: usize = 9;

/// `num / den`, or `None` when `|den|` is below [`RATIO_EPS`].
pub fn guarded_ratio<T: Real>(num: T, den: T) -> Option<T> {
    if den.abs() < T::lit(RATIO_EPS) {
        None
    } else {
        Some(num / den)
    }
}

pub fn cloud_test<T: Real>(r1: T, r2: T) -> Option<T> {
    guarded_ratio(r2, r1)
}

pub fn snow_test<T: Real>(r1: T, r3: T) -> Option<T> {
    guarded_ratio(r1 - r3, r1 + r3)
}

pub fn ndvi<T: Real>(r1: T, r2: T) -> Option<T> {
    guarded_ratio(r2 - r1, r2 + r1)
}

/// Mean and population standard deviation over `(2*half+1)^2` windows,
/// truncated at the borders. Pixels with `valid == false` are left out of
/// every window; windows with no valid pixel yield `None`.
#[allow(clippy::type_complexity)]
pub fn window_stats<T: Real>(
    grid: ArrayView2<T>,
    valid: Option<ArrayView2<bool>>,
    half: usize,
) -> Array2<Option<(T, T)>> {
    let (rows, cols) = grid.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let r0 = r.saturating_sub(half);
        let r1 = (r + half).min(rows - 1);
        let c0 = c.saturating_sub(half);
        let c1 = (c + half).min(cols - 1);
        let win = grid.slice(s![r0..=r1, c0..=c1]);
        let ok = |rr: usize, cc: usize| valid.map_or(true, |v| v[(r0 + rr, c0 + cc)]);
        let mut n = 0usize;
        let mut sum = T::zero();
        for ((rr, cc), &x) in win.indexed_iter() {
            if ok(rr, cc) {
                n += 1;
                sum += x;
            }
        }
        if n == 0 {
            return None;
        }
        let mean = sum / T::lit(n as f64);
        let mut ss = T::zero();
        for ((rr, cc), &x) in win.indexed_iter() {
            if ok(rr, cc) {
                ss += (x - mean) * (x - mean);
            }
        }
        Some((mean, (ss / T::lit(n as f64)).sqrt()))
    })
}

/// Feature maps of one chip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub regime: Regime,
    /// `[rows, cols, regime.dim()]`.
    pub values: Array3<f64>,
    /// Pixels with an invalid input or a guarded ratio; their affected
    /// features are 0. Excluded from training samples.
    pub flagged: Array2<bool>,
}

impl FeatureGrid {
    pub fn dims(&self) -> (usize, usize) {
        self.flagged.dim()
    }

    pub fn pixel(&self, row: usize, col: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.slice(s![row, col, ..])
    }
}

pub fn extract_features(chip: &LandmarkChip, regime: Regime) -> Result<FeatureGrid, FeatureError> {
    if !chip.calibrated {
        return Err(FeatureError::UncalibratedChip);
    }
    let sza = chip.sza.ok_or(FeatureError::MissingSza)?;
    if Regime::for_sza(sza) != regime {
        return Err(FeatureError::RegimeMismatch { sza, regime });
    }
    let (rows, cols) = chip.dims();
    let band = |k: usize| chip.cube.index_axis(Axis(2), k);
    let validity = |k: usize| band(k).mapv(|v| v != INVALID && v.is_finite());

    let bt9_valid = validity(BT9);
    let bt9_win3 = window_stats(band(BT9), Some(bt9_valid.view()), 1);
    let mut flagged = Array2::from_elem((rows, cols), false);
    let mut values = Array3::<f64>::zeros((rows, cols, regime.dim()));

    // (value, ok) helper: invalid inputs become 0 and flag the pixel
    let put = |v: Option<f64>| match v {
        Some(x) if x.is_finite() => (x, true),
        _ => (0.0, false),
    };

    match regime {
        Regime::Night => {
            let thermal = [R4, BT7, BT9, BT10].map(|k| (band(k), validity(k)));
            for r in 0..rows {
                for c in 0..cols {
                    let mut ok_all = true;
                    let mut f = [0.0; 6];
                    for (i, (b, v)) in thermal.iter().enumerate() {
                        let (x, ok) = put(v[(r, c)].then_some(b[(r, c)]));
                        f[i] = x;
                        ok_all &= ok;
                    }
                    let (m, s) = bt9_win3[(r, c)].unzip();
                    let (m, okm) = put(m);
                    let (s, oks) = put(s);
                    f[4] = m;
                    f[5] = s;
                    ok_all &= okm && oks;
                    values.slice_mut(s![r, c, ..]).assign(&ndarray::ArrayView1::from(&f));
                    flagged[(r, c)] = !ok_all;
                }
            }
        }
        Regime::Day => {
            let r1_valid = validity(R1);
            let r1_win3 = window_stats(band(R1), Some(r1_valid.view()), 1);
            let r1_win5 = window_stats(band(R1), Some(r1_valid.view()), 2);
            let chans = [R1, R2, R3, R4, BT7, BT9, BT10].map(|k| (band(k), validity(k)));
            for r in 0..rows {
                for c in 0..cols {
                    let mut ok_all = true;
                    let mut f = [0.0; 16];
                    let mut raw = [None; 7];
                    for (i, (b, v)) in chans.iter().enumerate() {
                        raw[i] = v[(r, c)].then_some(b[(r, c)]);
                        let (x, ok) = put(raw[i]);
                        f[i] = x;
                        ok_all &= ok;
                    }
                    let (x1, x2, x3) = (raw[0], raw[1], raw[2]);
                    let both = |a: Option<f64>, b: Option<f64>| a.zip(b);
                    let indices = [
                        both(x1, x2).and_then(|(a, b)| cloud_test(a, b)),
                        both(x1, x3).and_then(|(a, b)| snow_test(a, b)),
                        both(x1, x2).and_then(|(a, b)| ndvi(a, b)),
                    ];
                    for (i, v) in indices.into_iter().enumerate() {
                        let (x, ok) = put(v);
                        f[7 + i] = x;
                        ok_all &= ok;
                    }
                    let stats = [r1_win3[(r, c)], r1_win5[(r, c)], bt9_win3[(r, c)]];
                    for (i, st) in stats.into_iter().enumerate() {
                        let (m, s) = st.unzip();
                        let (m, okm) = put(m);
                        let (s, oks) = put(s);
                        f[10 + 2 * i] = m;
                        f[11 + 2 * i] = s;
                        ok_all &= okm && oks;
                    }
                    values.slice_mut(s![r, c, ..]).assign(&ndarray::ArrayView1::from(&f));
                    flagged[(r, c)] = !ok_all;
                }
            }
        }
    }
    Ok(FeatureGrid { regime, values, flagged })
}

/// Per-feature min/max learned on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler<T> {
    pub min: Vec<T>,
    pub max: Vec<T>,
}

impl<T: Real> MinMaxScaler<T> {
    /// Scaler that leaves `[0, 1]` data unchanged.
    pub fn identity(dim: usize) -> Self {
        MinMaxScaler { min: vec![T::zero(); dim], max: vec![T::one(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn fit(rows: ArrayView2<T>) -> Result<Self, FeatureError> {
        if rows.nrows() == 0 {
            return Err(FeatureError::EmptyInput);
        }
        let mut min = rows.row(0).to_vec();
        let mut max = min.clone();
        for row in rows.rows() {
            for (j, &x) in row.iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    /// `(x - min) / (max - min)`, unclipped; degenerate features map to 0.
    pub fn scale_value(&self, j: usize, x: T) -> T {
        let span = self.max[j] - self.min[j];
        if span > T::zero() {
            (x - self.min[j]) / span
        } else {
            T::zero()
        }
    }

    pub fn apply_row(&self, row: &mut [T]) -> Result<(), FeatureError> {
        if row.len() != self.dim() {
            return Err(FeatureError::DimensionMismatch { expected: self.dim(), found: row.len() });
        }
        for (j, x) in row.iter_mut().enumerate() {
            *x = self.scale_value(j, *x);
        }
        Ok(())
    }

    pub fn apply(&self, rows: ArrayView2<T>) -> Result<Array2<T>, FeatureError> {
        if rows.ncols() != self.dim() {
            return Err(FeatureError::DimensionMismatch { expected: self.dim(), found: rows.ncols() });
        }
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.scale_value(j, *x);
            }
        }
        Ok(out)
    }
}

const TABLE_MAGIC: &[u8; 4] = b"LMFT";
const TABLE_VERSION: u16 = 1;

/// Writes a flat float64 feature table: magic, version, `n_rows` (u64),
/// `n_cols` (u32), regime tag (0 day, 1 night), then row-major data.
pub fn write_feature_table(path: impl AsRef<Path>, rows: ArrayView2<f64>, regime: Regime) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(19 + rows.len() * 8);
    buf.extend_from_slice(TABLE_MAGIC);
    buf.extend_from_slice(&TABLE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(rows.ncols() as u32).to_le_bytes());
    buf.push(match regime {
        Regime::Day => 0,
        Regime::Night => 1,
    });
    for &x in rows.iter() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| FeatureError::Table(format!("{}: {e}", path.display())))
}

pub fn read_feature_table(path: impl AsRef<Path>) -> Result<(Array2<f64>, Regime), FeatureError> {
    let path = path.as_ref();
    let err = |m: &str| FeatureError::Table(format!("{}: {m}", path.display()));
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| err(&e.to_string()))?;
    if buf.len() < 19 || &buf[..4] != TABLE_MAGIC {
        return Err(err("bad magic"));
    }
    if u16::from_le_bytes([buf[4], buf[5]]) != TABLE_VERSION {
        return Err(err("unsupported version"));
    }
    let n = u64::from_le_bytes(buf[6..14].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(buf[14..18].try_into().unwrap()) as usize;
    let regime = match buf[18] {
        0 => Regime::Day,
        1 => Regime::Night,
        _ => return Err(err("bad regime tag")),
    };
    if d != regime.dim() || n.checked_mul(d).and_then(|x| x.checked_mul(8)) != Some(buf.len() - 19) {
        return Err(err("size does not match header"));
    }
    let data = buf[19..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Array2::from_shape_vec((n, d), data).expect("size checked"), regime))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::{AcqTime, LatLon, SEVIRI_CHANNELS};
    use ndarray::array;
    use proptest::prelude::*;

    fn calibrated_chip(rows: usize, cols: usize, sza: f64, f: impl Fn(usize, usize, usize) -> f64) -> LandmarkChip {
        LandmarkChip {
            id: 1,
            num: 1,
            name: "t".into(),
            centre: [0.0, 0.0],
            latlon: LatLon::new(0.0, 0.0),
            time: AcqTime::parse("20100101120000").unwrap(),
            channels: SEVIRI_CHANNELS.to_vec(),
            cube: Array3::from_shape_fn((rows, cols, 11), |(r, c, k)| f(r, c, k)),
            l2mask: Array2::from_elem((rows, cols), 50),
            hrv: None,
            sza: Some(sza),
            calibrated: true,
        }
    }

    #[test]
    fn spectral_indices() {
        assert_eq!(snow_test(0.3, 0.3), Some(0.0));
        assert_eq!(cloud_test(0.2, 0.4), Some(2.0));
        assert!((ndvi(0.2f64, 0.4).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ndvi(0.0, 0.0), None);
        assert_eq!(cloud_test(0.0_f32, 1.0), None);
    }

    #[test]
    fn constant_chip_has_flat_windows() {
        let chip = calibrated_chip(5, 5, 30.0, |_, _, _| 0.37);
        let g = extract_features(&chip, Regime::Day).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let p = g.pixel(r, c);
                for &(m, s) in &[(10, 11), (12, 13), (14, 15)] {
                    assert!((p[m] - 0.37).abs() < 1e-12);
                    assert!(p[s].abs() < 1e-12);
                }
            }
        }
        assert!(g.flagged.iter().all(|&f| !f));
    }

    #[test]
    fn day_vector_follows_table_order() {
        let chip = calibrated_chip(1, 1, 30.0, |_, _, k| [0.2, 0.4, 0.1, 290.0, 0.0, 0.0, 280.0, 0.0, 285.0, 284.0, 0.0][k]);
        let g = extract_features(&chip, Regime::Day).unwrap();
        let p = g.pixel(0, 0).to_vec();
        assert_eq!(&p[..7], &[0.2, 0.4, 0.1, 290.0, 280.0, 285.0, 284.0]);
        assert_eq!(p[7], 2.0);
        assert!((p[8] - 0.1 / 0.3).abs() < 1e-15);
        assert!((p[9] - 0.2 / 0.6).abs() < 1e-15);
        assert_eq!(&p[10..], &[0.2, 0.0, 0.2, 0.0, 285.0, 0.0]);
    }

    #[test]
    fn night_vector_is_thermal_subset() {
        let chip = calibrated_chip(2, 2, 120.0, |r, c, k| if k < 3 { INVALID } else { 250.0 + k as f64 + (r + c) as f64 });
        let night = extract_features(&chip, Regime::Night).unwrap();
        let day_like = {
            let mut c2 = chip.clone();
            c2.sza = Some(30.0);
            for v in c2.cube.slice_mut(s![.., .., ..3]).iter_mut() {
                *v = 0.5;
            }
            extract_features(&c2, Regime::Day).unwrap()
        };
        for r in 0..2 {
            for c in 0..2 {
                let d = day_like.pixel(r, c);
                let expect = [d[3], d[4], d[5], d[6], d[14], d[15]];
                assert_eq!(night.pixel(r, c).to_vec(), expect.to_vec());
            }
        }
        assert!(night.flagged.iter().all(|&f| !f));
        assert_eq!(
            extract_features(&chip, Regime::Day),
            Err(FeatureError::RegimeMismatch { sza: 120.0, regime: Regime::Day })
        );
        let mut raw = chip.clone();
        raw.calibrated = false;
        assert_eq!(extract_features(&raw, Regime::Night), Err(FeatureError::UncalibratedChip));
    }

    #[test]
    fn zero_denominators_and_invalid_inputs_are_flagged_not_nan() {
        let chip = calibrated_chip(3, 3, 40.0, |r, c, k| {
            if (r, c) == (1, 1) && k < 2 {
                0.0
            } else if (r, c) == (0, 2) && k == 8 {
                INVALID
            } else {
                0.1 + k as f64
            }
        });
        let g = extract_features(&chip, Regime::Day).unwrap();
        assert!(g.values.iter().all(|v| v.is_finite()));
        assert!(g.flagged[(1, 1)]);
        assert_eq!(g.pixel(1, 1)[7], 0.0);
        assert!(g.flagged[(0, 2)]);
        assert_eq!(g.pixel(0, 2)[5], 0.0);
        // neighbours of the invalid BT9 pixel ignore it inside their window
        assert_eq!(g.pixel(1, 2)[14], 0.1 + 8.0);
        assert!(!g.flagged[(2, 0)]);
    }

    #[test]
    fn scaler_examples() {
        let one = array![[1.0, -2.0, 3.0]];
        let s = MinMaxScaler::fit(one.view()).unwrap();
        assert_eq!(s.min, s.max);
        assert_eq!(s.apply(one.view()).unwrap(), array![[0.0, 0.0, 0.0]]);

        let rows = array![[0.0, 5.0], [10.0, 5.0], [4.0, 5.0]];
        let s = MinMaxScaler::fit(rows.view()).unwrap();
        assert_eq!((s.min[0], s.max[0]), (0.0, 10.0));
        let scaled = s.apply(rows.view()).unwrap();
        assert_eq!(scaled.column(0).to_vec(), vec![0.0, 1.0, 0.4]);
        assert_eq!(scaled.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
        let refit = MinMaxScaler::fit(scaled.view()).unwrap();
        assert_eq!((refit.min[0], refit.max[0]), (0.0, 1.0));

        let s2 = MinMaxScaler { min: vec![1.0], max: vec![3.0] };
        assert_eq!(s2.apply(array![[0.0], [1.0], [3.0]].view()).unwrap(), array![[-0.5], [0.0], [1.0]]);
        assert!(matches!(s2.apply(rows.view()), Err(FeatureError::DimensionMismatch { .. })));
        assert_eq!(MinMaxScaler::<f64>::fit(Array2::zeros((0, 3)).view()), Err(FeatureError::EmptyInput));
    }

    #[test]
    fn feature_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ftab");
        let m = Array2::from_shape_fn((4, 6), |(i, j)| i as f64 * 0.1 - j as f64);
        write_feature_table(&p, m.view(), Regime::Night).unwrap();
        assert_eq!(read_feature_table(&p).unwrap(), (m, Regime::Night));
    }

    proptest! {
        #[test]
        fn interior_features_are_translation_equivariant(seed in any::<u64>(), dr in 0usize..3, dc in 0usize..3) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, &[]);
            let big: Array3<f64> = Array3::from_shape_fn((14, 14, 11), |_| rng.gen_range(0.05..0.9));
            let a = calibrated_chip(10, 10, 30.0, |r, c, k| big[(r, c, k)]);
            let b = calibrated_chip(10, 10, 30.0, |r, c, k| big[(r + dr, c + dc, k)]);
            let fa = extract_features(&a, Regime::Day).unwrap();
            let fb = extract_features(&b, Regime::Day).unwrap();
            // pixels whose 5x5 window is inside both chips
            for r in (2 + dr)..8 {
                for c in (2 + dc)..8 {
                    let pa = fa.pixel(r, c);
                    let pb = fb.pixel(r - dr, c - dc);
                    for j in 0..16 {
                        prop_assert!((pa[j] - pb[j]).abs() <= 1e-12 * pa[j].abs().max(1.0));
                    }
                }
            }
        }
    }
}
