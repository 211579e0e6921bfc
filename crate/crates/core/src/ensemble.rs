//! Per-landmark ensembles of four illumination-specific classifiers:
//! training, persistence and SZA-dispatched prediction.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::LandmarkChip;
use crate::features::{extract_features, FeatureError, MinMaxScaler};
use crate::masks::{coastline_from_landcover, landcover_from_votes, CoastlineMask, LandCoverMask, MaskError, PixelLabel};
use crate::metrics::EvalSample;
use crate::num::{fmt_exact, parse_exact};
use crate::partition::{assign_range, compute_sza_m, partition_archive, IlluminationRange, PartitionError, PerRange, SzaThresholds};
use crate::radiometry::{calibrate_chip, CalibrationConfig, RadiometryError};
use crate::rng::derive_seed;
use crate::sampling::{collect_labeled, draw_balanced, labels, feature_matrix, SampleSet, SampleSpec, SamplingError};
use crate::solar::{sun_position, SolarError};
use crate::svm::io::{model_from_str, model_to_string};
use crate::svm::{cv_grid_search, CvOptions, GridPoint, GridSearchReport, SvmError, SvmModel};

pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn model_file(range: IlluminationRange) -> String {
    format!("model_{}.svm", range.name())
}

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("range {range} is underpopulated: {detail}")]
    RangeUnderpopulated { range: IlluminationRange, detail: String },
    #[error("chip belongs to landmark {found}, ensemble is for landmark {expected}")]
    WrongLandmark { expected: u32, found: u32 },
    #[error("chips from several landmarks given: {0:?}")]
    MixedLandmarks(Vec<u32>),
    #[error("no chips given")]
    NoChips,
    #[error("bundle version {found} is not supported (expected {BUNDLE_VERSION})")]
    VersionMismatch { found: String },
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Radiometry(#[from] RadiometryError),
    #[error(transparent)]
    Solar(#[from] SolarError),
    #[error(transparent)]
    Masks(#[from] MaskError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Svm(#[from] SvmError),
}

fn io_err(path: &Path, source: std::io::Error) -> EnsembleError {
    EnsembleError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub spec: SampleSpec,
    pub grid: Vec<GridPoint<f64>>,
    pub folds: usize,
    pub tol: f64,
    pub cache_mb: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { spec: SampleSpec::default(), grid: crate::svm::default_grid(), folds: 10, tol: 1e-3, cache_mb: 100 }
    }
}

/// What went into one range's classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RangeManifest {
    pub chips: usize,
    pub pool: usize,
    pub train_cloud: usize,
    pub train_clear: usize,
    pub test: usize,
    pub c: f64,
    pub gamma: f64,
    pub cv_accuracy: f64,
    pub n_sv: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub folds: usize,
    pub grid_points: usize,
    pub landcover_votes: usize,
    /// Scaler policy: fitted once per range on the whole training split.
    pub scaler: String,
    pub ranges: PerRange<RangeManifest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub landmark: u32,
    pub thresholds: SzaThresholds<f64>,
    pub models: PerRange<SvmModel<f64>>,
    pub manifest: TrainingManifest,
}

/// Everything produced while training one landmark.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub ensemble: EnsembleModel,
    pub test_sets: PerRange<SampleSet>,
    pub grid_reports: PerRange<GridSearchReport<f64>>,
    pub landcover: LandCoverMask,
    pub coastline: CoastlineMask,
}

fn landmark_of(chips: &[LandmarkChip]) -> Result<u32, EnsembleError> {
    let first = chips.first().ok_or(EnsembleError::NoChips)?.num;
    let mut nums: Vec<u32> = chips.iter().map(|c| c.num).collect();
    nums.sort_unstable();
    nums.dedup();
    if nums.len() > 1 {
        return Err(EnsembleError::MixedLandmarks(nums));
    }
    Ok(first)
}

/// Fills a missing `sza` from the chip centre.
pub fn ensure_sza(chip: &mut LandmarkChip) -> Result<f64, SolarError> {
    if let Some(s) = chip.sza {
        return Ok(s);
    }
    let s = sun_position(chip.latlon.lat, chip.latlon.lon, chip.time.datetime())?.zenith;
    chip.sza = Some(s);
    Ok(s)
}

/// Runs the whole per-landmark chain on raw-count chips. Either all four
/// range classifiers are produced or an error is returned.
pub fn train_ensemble(
    mut chips: Vec<LandmarkChip>,
    cal: &CalibrationConfig<f64>,
    cfg: &TrainConfig,
) -> Result<TrainOutput, EnsembleError> {
    let landmark = landmark_of(&chips)?;
    chips.sort_by_key(|c| c.time);
    for c in chips.iter_mut() {
        ensure_sza(c)?;
    }
    let landcover = landcover_from_votes(&chips)?;
    let coastline = coastline_from_landcover(&landcover);
    let chips = chips
        .par_iter()
        .map(|c| if c.calibrated { Ok(c.clone()) } else { calibrate_chip(c, cal) })
        .collect::<Result<Vec<_>, _>>()?;
    let szas: Vec<f64> = chips.iter().map(|c| c.sza.expect("annotated above")).collect();
    let thresholds = SzaThresholds::new(compute_sza_m(&szas)?)?;
    let parts = partition_archive(chips, &thresholds)?;

    let mut models = Vec::with_capacity(4);
    let mut manifests = Vec::with_capacity(4);
    let mut test_sets = Vec::with_capacity(4);
    let mut reports = Vec::with_capacity(4);
    for (range, chips) in parts.iter() {
        let (model, manifest, test, report) = train_range(landmark, range, chips, &landcover, &coastline, cfg)?;
        models.push(model);
        manifests.push(manifest);
        test_sets.push(test);
        reports.push(report);
    }
    let manifest = TrainingManifest {
        seed: cfg.spec.seed,
        n_train: cfg.spec.n_train,
        n_test: cfg.spec.n_test,
        folds: cfg.folds,
        grid_points: cfg.grid.len(),
        landcover_votes: landcover.votes,
        scaler: "once per range on the training split".into(),
        ranges: four(manifests),
    };
    Ok(TrainOutput {
        ensemble: EnsembleModel { landmark, thresholds, models: four(models), manifest },
        test_sets: four(test_sets),
        grid_reports: four(reports),
        landcover,
        coastline,
    })
}

fn four<T>(v: Vec<T>) -> PerRange<T> {
    PerRange(v.try_into().unwrap_or_else(|_| unreachable!("one entry per range")))
}

type RangeResult = (SvmModel<f64>, RangeManifest, SampleSet, GridSearchReport<f64>);

fn train_range(
    landmark: u32,
    range: IlluminationRange,
    chips: &[LandmarkChip],
    lc: &LandCoverMask,
    coast: &CoastlineMask,
    cfg: &TrainConfig,
) -> Result<RangeResult, EnsembleError> {
    let under = |detail: String| EnsembleError::RangeUnderpopulated { range, detail };
    if chips.is_empty() {
        return Err(under("no chips".into()));
    }
    let regime = range.regime();
    let pool = match collect_labeled(chips, regime, lc, coast) {
        Err(SamplingError::EmptyPool) => return Err(under("no labelled pixels".into())),
        r => r?,
    };
    let seed = derive_seed(cfg.spec.seed, &[landmark as u64, range.index() as u64]);
    let spec = SampleSpec { seed, ..cfg.spec };
    let draw = draw_balanced(&pool, &spec)?;
    let y = labels(&pool, &draw.train);
    let n_cloud = y.iter().filter(|&&v| v > 0).count();
    let n_clear = y.len() - n_cloud;
    let need = 2 * cfg.folds;
    if n_cloud < need || n_clear < need {
        return Err(under(format!("{n_cloud} cloud and {n_clear} clear training pixels, need {need} of each")));
    }
    let raw = feature_matrix(&pool, &draw.train, regime.dim());
    let scaler = MinMaxScaler::fit(raw.view())?;
    let x = scaler.apply(raw.view())?;
    let opts = CvOptions { folds: cfg.folds, seed: derive_seed(seed, &[0xC5]), tol: cfg.tol, cache_mb: cfg.cache_mb };
    let (fit, report) = cv_grid_search(x.view(), &y, &cfg.grid, &opts)?;
    let mut warnings = draw.warnings.clone();
    if !fit.stats.converged {
        warnings.push(format!("final training stopped at the iteration cap ({} iterations)", fit.stats.iterations));
    }
    let model = SvmModel { regime: Some(regime), scaler, ..fit.model };
    let manifest = RangeManifest {
        chips: chips.len(),
        pool: pool.len(),
        train_cloud: n_cloud,
        train_clear: n_clear,
        test: draw.test.len(),
        c: report.chosen.c,
        gamma: report.chosen.gamma,
        cv_accuracy: report.chosen_accuracy,
        n_sv: model.n_sv(),
        converged: fit.stats.converged,
        warnings,
    };
    log::info!(
        "landmark {landmark} {range}: {} chips, pool {}, train {}+{}, C={} gamma={} cv={:.4}",
        chips.len(),
        pool.len(),
        n_cloud,
        n_clear,
        manifest.c,
        manifest.gamma,
        manifest.cv_accuracy
    );
    let test = SampleSet::from_pool(&pool, &draw.test, regime);
    Ok((model, manifest, test, report))
}

/// Predicted cloud mask of one chip.
#[derive(Debug, Clone, PartialEq)]
pub struct ChipPrediction {
    pub range: IlluminationRange,
    pub sza: f64,
    /// `true` = cloud.
    pub mask: Array2<bool>,
    /// Pixels whose L2 code is no-data; labelled clear.
    pub nodata_pixels: usize,
}

impl EnsembleModel {
    pub fn model_for(&self, sza: f64) -> (IlluminationRange, &SvmModel<f64>) {
        let r = assign_range(sza, &self.thresholds);
        (r, &self.models[r])
    }

    /// Classifies already-extracted raw feature rows with one range's model.
    pub fn classify_rows(&self, range: IlluminationRange, raw: ndarray::ArrayView2<f64>) -> Result<Vec<bool>, EnsembleError> {
        let m = &self.models[range];
        let x = m.scaler.apply(raw)?;
        Ok(m.decision_batch(x.view())?.into_iter().map(|d| d >= 0.0).collect())
    }

    /// Labels every test pixel of `sets` for report building.
    pub fn evaluate_sets(&self, sets: &PerRange<SampleSet>) -> Result<Vec<EvalSample>, EnsembleError> {
        let mut out = Vec::new();
        for (range, set) in sets.iter() {
            if set.is_empty() {
                continue;
            }
            let pred = self.classify_rows(range, set.features.view())?;
            out.extend(set.meta.iter().zip(pred).map(|(m, p)| EvalSample {
                range,
                sza: m.sza,
                cover: m.stratum.cover,
                row: m.key.row as usize,
                col: m.key.col as usize,
                truth_cloud: m.cloud,
                pred_cloud: p,
                suspect: m.suspect,
            }));
        }
        Ok(out)
    }
}

/// Routes the chip to the range model given by its SZA, calibrating raw
/// counts first.
pub fn predict_chip(ens: &EnsembleModel, chip: &LandmarkChip, cal: &CalibrationConfig<f64>) -> Result<ChipPrediction, EnsembleError> {
    if chip.num != ens.landmark {
        return Err(EnsembleError::WrongLandmark { expected: ens.landmark, found: chip.num });
    }
    let mut chip = chip.clone();
    let sza = ensure_sza(&mut chip)?;
    let chip = if chip.calibrated { chip } else { calibrate_chip(&chip, cal)? };
    let (range, model) = ens.model_for(sza);
    let fg = extract_features(&chip, range.regime())?;
    let (rows, cols) = fg.dims();
    let flat = fg
        .values
        .into_shape_with_order((rows * cols, range.regime().dim()))
        .map_err(|e| EnsembleError::CorruptBundle(e.to_string()))?;
    let x = model.scaler.apply(flat.view())?;
    let nodata = chip.l2mask.mapv(|m| m == PixelLabel::NoData.code());
    let dec: Vec<f64> = (0..x.nrows()).into_par_iter().map(|i| model.decision_view(x.row(i))).collect();
    let mask = Array2::from_shape_fn((rows, cols), |(r, c)| !nodata[(r, c)] && dec[r * cols + c] >= 0.0);
    let nodata_pixels = nodata.iter().filter(|&&b| b).count();
    if nodata_pixels > 0 {
        log::warn!("chip {} of landmark {}: {nodata_pixels} no-data pixels labelled clear", chip.time, chip.num);
    }
    Ok(ChipPrediction { range, sza, mask, nodata_pixels })
}

fn manifest_text(ens: &EnsembleModel) -> String {
    let m = &ens.manifest;
    let mut s = String::new();
    let _ = writeln!(s, "bundle_version {BUNDLE_VERSION}");
    let _ = writeln!(s, "landmark {}", ens.landmark);
    let _ = writeln!(s, "sza_m {}", fmt_exact(ens.thresholds.sza_m));
    let _ = writeln!(s, "seed {}", m.seed);
    let _ = writeln!(s, "n_train {}", m.n_train);
    let _ = writeln!(s, "n_test {}", m.n_test);
    let _ = writeln!(s, "folds {}", m.folds);
    let _ = writeln!(s, "grid_points {}", m.grid_points);
    let _ = writeln!(s, "landcover_votes {}", m.landcover_votes);
    let _ = writeln!(s, "scaler {}", m.scaler);
    for (r, rm) in m.ranges.iter() {
        let _ = writeln!(s, "range {r}");
        let _ = writeln!(s, "  model {}", model_file(r));
        let _ = writeln!(s, "  chips {}", rm.chips);
        let _ = writeln!(s, "  pool {}", rm.pool);
        let _ = writeln!(s, "  train_cloud {}", rm.train_cloud);
        let _ = writeln!(s, "  train_clear {}", rm.train_clear);
        let _ = writeln!(s, "  test {}", rm.test);
        let _ = writeln!(s, "  C {}", fmt_exact(rm.c));
        let _ = writeln!(s, "  gamma {}", fmt_exact(rm.gamma));
        let _ = writeln!(s, "  cv_accuracy {}", fmt_exact(rm.cv_accuracy));
        let _ = writeln!(s, "  n_sv {}", rm.n_sv);
        let _ = writeln!(s, "  converged {}", rm.converged);
        for w in &rm.warnings {
            let _ = writeln!(s, "  warning {}", w.replace('\n', " "));
        }
    }
    s
}

struct ManifestReader<'a> {
    lines: std::iter::Peekable<std::str::Lines<'a>>,
}

impl<'a> ManifestReader<'a> {
    fn value(&mut self, key: &str) -> Result<&'a str, EnsembleError> {
        let line = self.lines.next().ok_or_else(|| EnsembleError::CorruptBundle(format!("missing {key}")))?;
        line.trim_start()
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| EnsembleError::CorruptBundle(format!("expected {key}, found {line:?}")))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, EnsembleError> {
        let v = self.value(key)?;
        v.parse().map_err(|_| EnsembleError::CorruptBundle(format!("bad value {v:?} for {key}")))
    }

    fn float(&mut self, key: &str) -> Result<f64, EnsembleError> {
        let v = self.value(key)?;
        parse_exact(v).ok_or_else(|| EnsembleError::CorruptBundle(format!("bad value {v:?} for {key}")))
    }
}

fn parse_manifest(text: &str) -> Result<(u32, SzaThresholds<f64>, TrainingManifest), EnsembleError> {
    let mut r = ManifestReader { lines: text.lines().peekable() };
    let version = r.value("bundle_version")?;
    if version != BUNDLE_VERSION.to_string() {
        return Err(EnsembleError::VersionMismatch { found: version.to_string() });
    }
    let landmark = r.parse("landmark")?;
    let sza_m = r.float("sza_m")?;
    let thresholds = SzaThresholds::new(sza_m).map_err(|e| EnsembleError::CorruptBundle(e.to_string()))?;
    let seed = r.parse("seed")?;
    let n_train = r.parse("n_train")?;
    let n_test = r.parse("n_test")?;
    let folds = r.parse("folds")?;
    let grid_points = r.parse("grid_points")?;
    let landcover_votes = r.parse("landcover_votes")?;
    let scaler = r.value("scaler")?.to_string();
    let mut ranges = PerRange::<RangeManifest>::default();
    for range in IlluminationRange::ALL {
        if r.value("range")? != range.name() {
            return Err(EnsembleError::CorruptBundle(format!("expected range {range}")));
        }
        if r.value("model")? != model_file(range) {
            return Err(EnsembleError::CorruptBundle(format!("unexpected model file for {range}")));
        }
        let mut m = RangeManifest {
            chips: r.parse("chips")?,
            pool: r.parse("pool")?,
            train_cloud: r.parse("train_cloud")?,
            train_clear: r.parse("train_clear")?,
            test: r.parse("test")?,
            c: r.float("C")?,
            gamma: r.float("gamma")?,
            cv_accuracy: r.float("cv_accuracy")?,
            n_sv: r.parse("n_sv")?,
            converged: r.parse("converged")?,
            warnings: Vec::new(),
        };
        while r.lines.peek().is_some_and(|l| l.trim_start().starts_with("warning ")) {
            m.warnings.push(r.value("warning")?.to_string());
        }
        ranges[range] = m;
    }
    if r.lines.any(|l| !l.trim().is_empty()) {
        return Err(EnsembleError::CorruptBundle("trailing manifest content".into()));
    }
    let manifest = TrainingManifest { seed, n_train, n_test, folds, grid_points, landcover_votes, scaler, ranges };
    Ok((landmark, thresholds, manifest))
}

/// Writes `manifest.txt` plus one model file per range into `dir`.
pub fn save_ensemble(ens: &EnsembleModel, dir: impl AsRef<Path>) -> Result<(), EnsembleError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (r, m) in ens.models.iter() {
        let p = dir.join(model_file(r));
        std::fs::write(&p, model_to_string(m)).map_err(|e| io_err(&p, e))?;
    }
    let p = dir.join(MANIFEST_FILE);
    std::fs::write(&p, manifest_text(ens)).map_err(|e| io_err(&p, e))
}

pub fn load_ensemble(dir: impl AsRef<Path>) -> Result<EnsembleModel, EnsembleError> {
    let dir = dir.as_ref();
    let p = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
    let (landmark, thresholds, manifest) = parse_manifest(&text)?;
    let mut models = Vec::with_capacity(4);
    for r in IlluminationRange::ALL {
        let p = dir.join(model_file(r));
        let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        let m: SvmModel<f64> = model_from_str(&text)
            .map_err(|e| EnsembleError::CorruptBundle(format!("{}: {e}", p.display())))?;
        if m.regime != Some(r.regime()) {
            return Err(EnsembleError::CorruptBundle(format!("{} does not hold a {} model", p.display(), r.regime().name())));
        }
        models.push(m);
    }
    Ok(EnsembleModel { landmark, thresholds, models: four(models), manifest })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Regime;
    use crate::synth::{generate_chip, SynthSpec};
    use ndarray::Array2;

    fn chips(landmark: usize) -> Vec<LandmarkChip> {
        let cal = CalibrationConfig::msg2_default();
        let spec = SynthSpec { days: 2, cadence_min: 30, rows: 8, cols: 8, seed: 3, ..Default::default() };
        let lm = &spec.landmarks[landmark];
        spec.times().iter().enumerate().map(|(i, &t)| generate_chip(&spec, lm, i, t, &cal).unwrap().0).collect()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            spec: SampleSpec { n_train: 200, n_test: 400, seed: 11 },
            grid: vec![GridPoint { c: 1.0, gamma: 1.0 }, GridPoint { c: 10.0, gamma: 1.0 }],
            folds: 3,
            tol: 1e-3,
            cache_mb: 4,
        }
    }

    fn trained() -> TrainOutput {
        train_ensemble(chips(0), &CalibrationConfig::msg2_default(), &config()).unwrap()
    }

    /// A model whose decision is `bias` everywhere.
    fn constant(regime: Regime, bias: f64) -> SvmModel<f64> {
        SvmModel {
            regime: Some(regime),
            c: 1.0,
            gamma: 1.0,
            bias,
            support_vectors: Array2::zeros((1, regime.dim())),
            dual_coef: vec![0.0],
            scaler: MinMaxScaler::identity(regime.dim()),
        }
    }

    #[test]
    fn four_models_with_matching_regimes_and_repeatable() {
        let a = trained();
        let b = trained();
        assert_eq!(a.ensemble, b.ensemble);
        for (r, m) in a.ensemble.models.iter() {
            assert_eq!(m.regime, Some(r.regime()));
            assert_eq!(m.dim(), r.regime().dim());
            let rm = &a.ensemble.manifest.ranges[r];
            assert!(rm.chips > 0 && rm.n_sv == m.n_sv());
            assert_eq!(rm.train_cloud + rm.train_clear, 200);
        }
        let total: usize = a.ensemble.manifest.ranges.iter().map(|(_, m)| m.chips).sum();
        assert_eq!(total, 96);
    }

    #[test]
    fn missing_night_range_is_reported() {
        let mut day = chips(0);
        day.retain_mut(|c| ensure_sza(c).unwrap() < 90.0);
        match train_ensemble(day, &CalibrationConfig::msg2_default(), &config()) {
            Err(EnsembleError::RangeUnderpopulated { range, .. }) => assert_eq!(range, IlluminationRange::Night),
            other => panic!("expected RangeUnderpopulated, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn mixed_or_empty_inputs_are_rejected() {
        let cal = CalibrationConfig::msg2_default();
        assert!(matches!(train_ensemble(Vec::new(), &cal, &config()), Err(EnsembleError::NoChips)));
        let mut mixed = chips(0);
        mixed.extend(chips(1).into_iter().take(3));
        assert!(matches!(train_ensemble(mixed, &cal, &config()), Err(EnsembleError::MixedLandmarks(v)) if v == [1, 2]));
    }

    #[test]
    fn bundle_round_trip_is_exact_and_byte_stable() {
        let ens = trained().ensemble;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_ensemble(&ens, a.path()).unwrap();
        let back = load_ensemble(a.path()).unwrap();
        assert_eq!(back, ens);
        save_ensemble(&back, b.path()).unwrap();
        for name in std::iter::once(MANIFEST_FILE.to_string()).chain(IlluminationRange::ALL.map(model_file)) {
            assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
        }
    }

    #[test]
    fn damaged_bundles_are_refused() {
        let ens = trained().ensemble;
        let dir = tempfile::tempdir().unwrap();
        save_ensemble(&ens, dir.path()).unwrap();
        let manifest = dir.path().join(MANIFEST_FILE);
        let good = std::fs::read_to_string(&manifest).unwrap();

        std::fs::write(&manifest, good.replacen("bundle_version 1", "bundle_version 7", 1)).unwrap();
        assert!(matches!(load_ensemble(dir.path()), Err(EnsembleError::VersionMismatch { found }) if found == "7"));

        std::fs::write(&manifest, good.replacen("  n_sv", "  nsv", 1)).unwrap();
        assert!(matches!(load_ensemble(dir.path()), Err(EnsembleError::CorruptBundle(_))));

        std::fs::write(&manifest, good.clone() + "extra 1\n").unwrap();
        assert!(matches!(load_ensemble(dir.path()), Err(EnsembleError::CorruptBundle(_))));

        std::fs::write(&manifest, &good).unwrap();
        let night = dir.path().join(model_file(IlluminationRange::Night));
        let day = std::fs::read(dir.path().join(model_file(IlluminationRange::High))).unwrap();
        std::fs::write(&night, day).unwrap();
        assert!(matches!(load_ensemble(dir.path()), Err(EnsembleError::CorruptBundle(_))));

        std::fs::remove_file(&night).unwrap();
        assert!(load_ensemble(dir.path()).is_err());
    }

    #[test]
    fn prediction_uses_the_model_of_the_chip_range() {
        let mut ens = trained().ensemble;
        let cal = CalibrationConfig::msg2_default();
        let mut seen = [false; 4];
        for target in IlluminationRange::ALL {
            ens.models = PerRange::from_fn(|r| constant(r.regime(), if r == target { 1.0 } else { -1.0 }));
            for mut chip in chips(0) {
                let sza = ensure_sza(&mut chip).unwrap();
                let p = predict_chip(&ens, &chip, &cal).unwrap();
                assert_eq!(p.range, assign_range(sza, &ens.thresholds));
                let expect_cloud = p.range == target;
                seen[p.range.index()] = true;
                for ((r, c), &m) in p.mask.indexed_iter() {
                    let nodata = chip.l2mask[(r, c)] == PixelLabel::NoData.code();
                    assert_eq!(m, expect_cloud && !nodata);
                }
            }
        }
        assert_eq!(seen, [true; 4]);
    }

    #[test]
    fn foreign_chips_are_refused() {
        let ens = trained().ensemble;
        let other = chips(1).swap_remove(0);
        match predict_chip(&ens, &other, &CalibrationConfig::msg2_default()) {
            Err(EnsembleError::WrongLandmark { expected: 1, found: 2 }) => {}
            other => panic!("expected WrongLandmark, got {:?}", other.map(|p| p.range)),
        }
    }

    #[test]
    fn every_held_out_pixel_is_scored() {
        let out = trained();
        let samples = out.ensemble.evaluate_sets(&out.test_sets).unwrap();
        let n: usize = out.test_sets.iter().map(|(_, s)| s.len()).sum();
        assert_eq!(samples.len(), n);
        let correct = samples.iter().filter(|s| s.pred_cloud == s.truth_cloud).count();
        assert!(correct as f64 > 0.9 * n as f64, "{correct}/{n}");
    }
}
