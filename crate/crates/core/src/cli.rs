//! The `landmarks` command: argument parsing and the six subcommands.
//!
//! Output layout of `train --out DIR`:
//!
//! ```text
//! DIR/registry.tsv                      landmark registry with sza_m filled in
//! DIR/summary.csv, histogram.csv, summary.txt
//! DIR/bundles/lmNNN/                    manifest.txt + model_{range}.svm
//! DIR/testsets/lmNNN/{range}.ftab       held-out pixels (+ .keys.tsv)
//! DIR/masks/lmNNN/{landcover,coastline}.lmgrid
//! DIR/cv/lmNNN_{range}.csv              full grid-search surface
//! DIR/reports/lmNNN/                    per-landmark evaluation report
//! DIR/failures.tsv                      only when some landmark failed
//! ```
//!
//! CSV headers:
//!
//! * `summary.csv`: `landmark,n,oa,kappa,oa_high,kappa_high,oa_medium,kappa_medium,oa_low,kappa_low,oa_night,kappa_night`
//! * `histogram.csv`: `oa_lo,oa_hi,oa_count,kappa_lo,kappa_hi,kappa_count`
//! * `ranges.csv`, `covers.csv`: `group,cover,n,tp,fp,fn,tn,oa,kappa,kappa_degenerate`
//! * `sza_bins.csv`: `sza_lo,sza_hi,n,oa,kappa`
//! * `cv/*.csv`: `c,gamma,mean_accuracy,unconverged_folds,fold_accuracy,chosen`
//! * `predictions.tsv`: `landmark,time,range,sza,cloud_pixels,nodata_pixels,pixels`

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{
    load_landmark_chips, read_grid, scan_archive, write_grid, AcqTime, Grid, LandmarkRegistry, RegistryEntry,
    ScanOptions, DEFAULT_EXCLUDED, GRID_EXT,
};
use crate::ensemble::{load_ensemble, predict_chip, save_ensemble, train_ensemble, EnsembleError, TrainConfig, MANIFEST_FILE};
use crate::masks::{chip_labels, coastline_from_landcover, landcover_from_votes, PixelLabel};
use crate::metrics::{evaluate, read_report, write_global_summary, write_report, EvalSample, EvaluationReport};
use crate::num::fmt_exact;
use crate::partition::{IlluminationRange, PerRange};
use crate::radiometry::CalibrationConfig;
use crate::sampling::{SampleSet, SampleSpec};
use crate::svm::{default_grid, parse_grid, GridSearchReport};
use crate::synth::{default_landmarks, generate_archive, SynthSpec};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "landmarks", version, about = "Cloud detection over geostationary landmark chips")]
pub struct Cli {
    /// Worker threads for all parallel stages [default: logical CPU count]
    #[arg(long, global = true)]
    pub workers: Option<NonZeroUsize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic archive with ground-truth cloud masks
    Synth(SynthArgs),
    /// Index an archive and write its landmark registry
    Scan(ScanArgs),
    /// Train one four-range ensemble per landmark and score it on held-out pixels
    Train(TrainArgs),
    /// Write predicted cloud masks for every chip of an archive
    Predict(PredictArgs),
    /// Build evaluation reports from held-out test sets or from predicted masks
    Evaluate(EvaluateArgs),
    /// Aggregate existing report.json files into a global summary
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output archive directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of landmarks (layouts cycle island, coast, lake)
    #[arg(long, default_value_t = 2)]
    pub n_landmarks: usize,
    /// First acquisition day, YYYY-MM-DD
    #[arg(long, default_value = "2010-01-01")]
    pub start: NaiveDate,
    #[arg(long, default_value_t = 30)]
    pub days: u32,
    /// Minutes between acquisitions
    #[arg(long, default_value_t = 15)]
    pub cadence: u32,
    #[arg(long, default_value_t = 16)]
    pub rows: usize,
    #[arg(long, default_value_t = 16)]
    pub cols: usize,
    /// Mean cloud fraction in [0, 1]
    #[arg(long, default_value_t = 0.5)]
    pub coverage: f64,
    /// Cloud signal in units of the noise standard deviation
    #[arg(long, default_value_t = 5.0)]
    pub contrast: f64,
    /// Reflectance noise standard deviation
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Smoothing radius of the cloud field, pixels
    #[arg(long, default_value_t = 1.5)]
    pub blob: f64,
    /// Calibration file [default: built-in MSG-2 table]
    #[arg(long)]
    pub cal: Option<PathBuf>,
}

/// Which landmarks of an archive take part.
#[derive(Debug, Args, Clone)]
pub struct Selection {
    /// Comma-separated landmark numbers [default: every included landmark]
    #[arg(long, value_delimiter = ',')]
    pub landmarks: Vec<u32>,
    /// Apply the default exclusion list (landmarks 91 and 98)
    #[arg(long, value_name = "BOOL", default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub exclude_defaults: bool,
    /// Exclude landmarks whose masks are more than this fraction no-data
    #[arg(long, default_value_t = 0.5)]
    pub nodata_threshold: f64,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Archive root
    #[arg(long)]
    pub archive: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sel: Selection,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Archive root
    #[arg(long)]
    pub archive: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Calibration file [default: built-in MSG-2 table]
    #[arg(long)]
    pub cal: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub sel: Selection,
    /// Training pixels per range
    #[arg(long, default_value_t = 10_000)]
    pub train_size: usize,
    /// Held-out test pixels per range
    #[arg(long, default_value_t = 100_000)]
    pub test_size: usize,
    /// Cross-validation folds
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Grid file with `c = ...` and `gamma = ...` lines [default: 5 x 10 built-in grid]
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Solver stopping tolerance
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Kernel cache per solver, MiB
    #[arg(long, default_value_t = 100)]
    pub cache_mb: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Archive root
    #[arg(long)]
    pub archive: PathBuf,
    /// A single bundle directory, or a `train` output directory
    #[arg(long)]
    pub models: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Calibration file [default: built-in MSG-2 table]
    #[arg(long)]
    pub cal: Option<PathBuf>,
    #[command(flatten)]
    pub sel: Selection,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// `train` output directory; its held-out test sets are scored
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub models: Option<PathBuf>,
    /// `predict` output directory; its masks are scored against the archive's L2 masks
    #[arg(long, requires = "archive")]
    pub predictions: Option<PathBuf>,
    /// Archive root (with --predictions)
    #[arg(long)]
    pub archive: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sel: Selection,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory searched recursively for report.json files
    #[arg(long)]
    pub reports: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

/// The single line printed on failure.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("landmarks: error: {}: {}: {}", e.kind().name(), e.code(), msg)
}

pub fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.get())
            .build_global()
            .map_err(|e| Error::Usage(format!("cannot size worker pool: {e}")))?;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn lm_tag(num: u32) -> String {
    format!("lm{num:03}")
}

fn wrote<E: Display>(path: &Path) -> impl FnOnce(E) -> Error + '_ {
    move |e| Error::output(path, std::io::Error::other(e.to_string()))
}

fn mkdir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::output(path, e))
}

fn calibration(path: &Option<PathBuf>) -> Result<CalibrationConfig<f64>, Error> {
    match path {
        Some(p) => Ok(CalibrationConfig::from_file(p)?),
        None => Ok(CalibrationConfig::msg2_default()),
    }
}

fn scan(archive: &Path, sel: &Selection) -> Result<LandmarkRegistry, Error> {
    if !(0.0..=1.0).contains(&sel.nodata_threshold) {
        return Err(Error::Usage(format!("--nodata-threshold {} is outside [0, 1]", sel.nodata_threshold)));
    }
    if !archive.is_dir() {
        return Err(Error::data("MissingArchive", format!("{} is not a directory", archive.display())));
    }
    let excluded = if sel.exclude_defaults { DEFAULT_EXCLUDED.into_iter().collect() } else { BTreeSet::new() };
    let reg = scan_archive(archive, &ScanOptions { nodata_threshold: sel.nodata_threshold, excluded })?;
    for (p, why) in &reg.rejected {
        log::warn!("skipped {}: {why}", p.display());
    }
    Ok(reg)
}

fn selected(reg: &LandmarkRegistry, sel: &Selection) -> Result<Vec<RegistryEntry>, Error> {
    if sel.landmarks.is_empty() {
        let all: Vec<RegistryEntry> = reg.included().cloned().collect();
        if all.is_empty() {
            return Err(Error::data("NoLandmarks", "every landmark of the archive is excluded"));
        }
        return Ok(all);
    }
    let wanted: BTreeSet<u32> = sel.landmarks.iter().copied().collect();
    wanted
        .into_iter()
        .map(|n| match reg.entries.get(&n) {
            None => Err(Error::data("UnknownLandmark", format!("landmark {n} is not in the archive"))),
            Some(e) if e.excluded => Err(Error::data("ExcludedLandmark", format!("landmark {n} is excluded: {}", e.reason))),
            Some(e) => Ok(e.clone()),
        })
        .collect()
}

fn cmd_synth(a: SynthArgs) -> Result<(), Error> {
    if a.n_landmarks == 0 {
        return Err(Error::Usage("--n-landmarks must be at least 1".into()));
    }
    let spec = SynthSpec {
        landmarks: default_landmarks(a.n_landmarks),
        rows: a.rows,
        cols: a.cols,
        start: a.start.and_hms_opt(0, 0, 0).expect("midnight exists"),
        days: a.days,
        cadence_min: a.cadence,
        coverage: a.coverage,
        blob_sigma: a.blob,
        contrast: a.contrast,
        noise: a.noise,
        seed: a.seed,
    };
    spec.validate()?;
    let cal = calibration(&a.cal)?;
    mkdir(&a.out)?;
    let reg = generate_archive(&spec, &cal, &a.out)?;
    let path = a.out.join("registry.tsv");
    reg.write_tsv(&path).map_err(wrote(&path))?;
    log::info!("wrote {} landmarks to {}", reg.entries.len(), a.out.display());
    Ok(())
}

fn cmd_scan(a: ScanArgs) -> Result<(), Error> {
    let reg = scan(&a.archive, &a.sel)?;
    let keep: BTreeSet<u32> = selected(&reg, &a.sel)?.iter().map(|e| e.num).collect();
    let reg = LandmarkRegistry {
        entries: reg.entries.into_iter().filter(|(n, e)| keep.contains(n) || e.excluded).collect(),
        rejected: reg.rejected,
    };
    mkdir(&a.out)?;
    let path = a.out.join("registry.tsv");
    reg.write_tsv(&path).map_err(wrote(&path))?;
    Ok(())
}

struct Trained {
    sza_m: f64,
    landcover: String,
    report: EvaluationReport,
}

#[derive(Serialize)]
struct CvRow {
    c: String,
    gamma: String,
    mean_accuracy: String,
    unconverged_folds: usize,
    fold_accuracy: String,
    chosen: bool,
}

fn write_cv(report: &GridSearchReport<f64>, path: &Path) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(wrote(path))?;
    for cell in &report.cells {
        let folds: Vec<String> = cell.fold_accuracy.iter().map(|&a| fmt_exact(a)).collect();
        w.serialize(CvRow {
            c: fmt_exact(cell.point.c),
            gamma: fmt_exact(cell.point.gamma),
            mean_accuracy: fmt_exact(cell.mean_accuracy),
            unconverged_folds: cell.unconverged_folds,
            fold_accuracy: folds.join(";"),
            chosen: cell.point == report.chosen,
        })
        .map_err(wrote(path))?;
    }
    w.flush().map_err(|e| Error::output(path, e))
}

fn train_one(entry: &RegistryEntry, cal: &CalibrationConfig<f64>, cfg: &TrainConfig, out: &Path) -> Result<Trained, Error> {
    let tag = lm_tag(entry.num);
    let chips = load_landmark_chips(entry)?;
    let t = train_ensemble(chips, cal, cfg)?;

    let bundle = out.join("bundles").join(&tag);
    save_ensemble(&t.ensemble, &bundle).map_err(wrote(&bundle))?;

    let sets = out.join("testsets").join(&tag);
    mkdir(&sets)?;
    for (r, set) in t.test_sets.iter() {
        set.save(&sets, r.name()).map_err(wrote(&sets))?;
    }

    let masks = out.join("masks").join(&tag);
    mkdir(&masks)?;
    let lc_rel = format!("masks/{tag}/landcover.{GRID_EXT}");
    let lc_path = out.join(&lc_rel);
    write_grid(&t.landcover.to_grid(), &lc_path).map_err(wrote(&lc_path))?;
    let coast_path = masks.join(format!("coastline.{GRID_EXT}"));
    write_grid(&t.coastline.to_grid(), &coast_path).map_err(wrote(&coast_path))?;

    let cv = out.join("cv");
    mkdir(&cv)?;
    for (r, rep) in t.grid_reports.iter() {
        write_cv(rep, &cv.join(format!("{tag}_{r}.csv")))?;
    }

    let samples = t.ensemble.evaluate_sets(&t.test_sets)?;
    let report = evaluate(&samples, t.landcover.grid.dim(), Some(entry.num))?;
    write_report(&report, out.join("reports").join(&tag))?;
    Ok(Trained { sza_m: t.ensemble.thresholds.sza_m, landcover: lc_rel, report })
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    if a.folds < 2 {
        return Err(Error::Usage("--folds must be at least 2".into()));
    }
    if a.train_size < 2 * a.folds || a.test_size == 0 {
        return Err(Error::Usage("--train-size must cover two pixels per fold and --test-size must be positive".into()));
    }
    if !(a.tol > 0.0) {
        return Err(Error::Usage("--tol must be positive".into()));
    }
    let grid = match &a.grid {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::data("MissingFile", format!("{}: {e}", p.display())))?;
            parse_grid(&text).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?
        }
        None => default_grid(),
    };
    let cal = calibration(&a.cal)?;
    let mut reg = scan(&a.archive, &a.sel)?;
    let entries = selected(&reg, &a.sel)?;
    mkdir(&a.out)?;
    let cfg = TrainConfig {
        spec: SampleSpec { n_train: a.train_size, n_test: a.test_size, seed: a.seed },
        grid,
        folds: a.folds,
        tol: a.tol,
        cache_mb: a.cache_mb,
    };

    let results: Vec<Result<Trained, Error>> = entries.par_iter().map(|e| train_one(e, &cal, &cfg, &a.out)).collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(t) => {
                let entry = reg.entries.get_mut(&e.num).expect("selected from this registry");
                entry.sza_m = Some(t.sza_m);
                entry.landcover = Some(t.landcover);
                reports.push(t.report);
            }
            Err(err) => {
                log::error!("landmark {}: {err}", e.num);
                failures.push((e.num, err));
            }
        }
    }
    let path = a.out.join("registry.tsv");
    reg.write_tsv(&path).map_err(wrote(&path))?;
    if !reports.is_empty() {
        write_global_summary(&reports, &a.out)?;
    }
    if failures.is_empty() {
        return Ok(());
    }
    let path = a.out.join("failures.tsv");
    let mut text = String::from("landmark\tcode\tmessage\n");
    for (n, e) in &failures {
        text += &format!("{n}\t{}\t{}\n", e.code(), e.to_string().replace(['\t', '\n'], " "));
    }
    std::fs::write(&path, text).map_err(|e| Error::output(&path, e))?;
    Err(failures.into_iter().next().map(|(_, e)| e).expect("non-empty"))
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    landmark: u32,
    time: String,
    range: String,
    sza: String,
    cloud_pixels: usize,
    nodata_pixels: usize,
    pixels: usize,
}

fn pred_path(out: &Path, num: u32, time: &AcqTime) -> PathBuf {
    out.join(lm_tag(num)).join(format!("{time}.pred.{GRID_EXT}"))
}

fn cmd_predict(a: PredictArgs) -> Result<(), Error> {
    let cal = calibration(&a.cal)?;
    let single = a.models.join(MANIFEST_FILE).is_file();
    let bundles = a.models.join("bundles");
    if !single && !bundles.is_dir() {
        return Err(Error::data("MissingBundle", format!("{} holds neither a bundle nor a bundles/ directory", a.models.display())));
    }
    let single = if single { Some(load_ensemble(&a.models)?) } else { None };
    let reg = scan(&a.archive, &a.sel)?;
    let entries = selected(&reg, &a.sel)?;
    mkdir(&a.out)?;

    let mut rows = Vec::new();
    for e in &entries {
        let loaded;
        let ens = match &single {
            Some(ens) => ens,
            None => {
                let dir = bundles.join(lm_tag(e.num));
                if !dir.join(MANIFEST_FILE).is_file() {
                    return Err(Error::data("MissingBundle", format!("no bundle for landmark {} in {}", e.num, bundles.display())));
                }
                loaded = load_ensemble(&dir)?;
                &loaded
            }
        };
        if ens.landmark != e.num {
            return Err(EnsembleError::WrongLandmark { expected: ens.landmark, found: e.num }.into());
        }
        let chips = load_landmark_chips(e)?;
        mkdir(&a.out.join(lm_tag(e.num)))?;
        let done: Vec<Result<PredictionRow, Error>> = chips
            .par_iter()
            .map(|chip| {
                let p = predict_chip(ens, chip, &cal)?;
                let path = pred_path(&a.out, e.num, &chip.time);
                let grid = Grid { label: format!("prediction {}", p.range), data: p.mask.mapv(|b| b as u8 as f64) };
                write_grid(&grid, &path).map_err(wrote(&path))?;
                Ok(PredictionRow {
                    landmark: e.num,
                    time: chip.time.to_string(),
                    range: p.range.name().to_string(),
                    sza: fmt_exact(p.sza),
                    cloud_pixels: p.mask.iter().filter(|&&b| b).count(),
                    nodata_pixels: p.nodata_pixels,
                    pixels: p.mask.len(),
                })
            })
            .collect();
        for r in done {
            rows.push(r?);
        }
        log::info!("landmark {}: {} chips predicted", e.num, chips.len());
    }
    let path = a.out.join("predictions.tsv");
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_path(&path).map_err(wrote(&path))?;
    for r in &rows {
        w.serialize(r).map_err(wrote(&path))?;
    }
    w.flush().map_err(|e| Error::output(&path, e))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Error> {
    let reports = match (&a.models, &a.predictions, &a.archive) {
        (Some(models), None, _) => evaluate_test_sets(models, &a.sel.landmarks, &a.out)?,
        (None, Some(preds), Some(archive)) => evaluate_predictions(preds, archive, &a.sel, &a.out)?,
        _ => return Err(Error::Usage("give --models, or --predictions with --archive".into())),
    };
    write_global_summary(&reports, &a.out)?;
    Ok(())
}

fn bundle_landmarks(bundles: &Path) -> Result<Vec<u32>, Error> {
    let rd = std::fs::read_dir(bundles)
        .map_err(|e| Error::data("MissingBundle", format!("{}: {e}", bundles.display())))?;
    let mut nums = Vec::new();
    for d in rd {
        let d = d.map_err(|e| Error::data("MissingBundle", format!("{}: {e}", bundles.display())))?;
        let name = d.file_name();
        if let Some(n) = name.to_str().and_then(|s| s.strip_prefix("lm")).and_then(|s| s.parse::<u32>().ok()) {
            nums.push(n);
        }
    }
    nums.sort_unstable();
    Ok(nums)
}

fn evaluate_test_sets(models: &Path, only: &[u32], out: &Path) -> Result<Vec<EvaluationReport>, Error> {
    let mut nums = bundle_landmarks(&models.join("bundles"))?;
    if !only.is_empty() {
        if let Some(n) = only.iter().find(|n| !nums.contains(n)) {
            return Err(Error::data("MissingBundle", format!("no bundle for landmark {n}")));
        }
        nums.retain(|n| only.contains(n));
    }
    if nums.is_empty() {
        return Err(Error::data("MissingBundle", format!("no bundles under {}", models.display())));
    }
    mkdir(out)?;
    nums.par_iter()
        .map(|&n| {
            let tag = lm_tag(n);
            let ens = load_ensemble(models.join("bundles").join(&tag))?;
            if ens.landmark != n {
                return Err(EnsembleError::WrongLandmark { expected: n, found: ens.landmark }.into());
            }
            let dir = models.join("testsets").join(&tag);
            let sets = IlluminationRange::ALL
                .iter()
                .map(|r| SampleSet::load(&dir, r.name()))
                .collect::<Result<Vec<_>, _>>()?;
            let sets = PerRange(sets.try_into().unwrap_or_else(|_| unreachable!("four ranges")));
            let dims = read_grid(models.join("masks").join(&tag).join(format!("landcover.{GRID_EXT}")))?.data.dim();
            let samples = ens.evaluate_sets(&sets)?;
            let report = evaluate(&samples, dims, Some(n))?;
            write_report(&report, out.join(&tag))?;
            Ok(report)
        })
        .collect()
}

fn evaluate_predictions(preds: &Path, archive: &Path, sel: &Selection, out: &Path) -> Result<Vec<EvaluationReport>, Error> {
    let table = preds.join("predictions.tsv");
    let mut rd = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(&table)
        .map_err(|e| Error::data("MissingFile", format!("{}: {e}", table.display())))?;
    let mut by_landmark: BTreeMap<u32, Vec<PredictionRow>> = BTreeMap::new();
    for row in rd.deserialize::<PredictionRow>() {
        let row = row.map_err(|e| Error::data("MalformedPredictions", format!("{}: {e}", table.display())))?;
        by_landmark.entry(row.landmark).or_default().push(row);
    }
    if !sel.landmarks.is_empty() {
        by_landmark.retain(|n, _| sel.landmarks.contains(n));
    }
    if by_landmark.is_empty() {
        return Err(Error::data("NoTestData", "no predictions to evaluate"));
    }
    let reg = scan(archive, sel)?;
    mkdir(out)?;
    let mut reports = Vec::new();
    for (n, rows) in &by_landmark {
        let entry = reg
            .entries
            .get(n)
            .ok_or_else(|| Error::data("UnknownLandmark", format!("landmark {n} is not in the archive")))?;
        let chips = load_landmark_chips(entry)?;
        let lc = landcover_from_votes(&chips)?;
        let coast = coastline_from_landcover(&lc);
        let by_time: BTreeMap<String, usize> = chips.iter().enumerate().map(|(i, c)| (c.time.to_string(), i)).collect();
        let per_chip: Vec<Result<Vec<EvalSample>, Error>> = rows
            .par_iter()
            .map(|row| {
                let chip = by_time
                    .get(&row.time)
                    .map(|&i| &chips[i])
                    .ok_or_else(|| Error::data("MissingChip", format!("landmark {n} has no chip at {}", row.time)))?;
                let range = IlluminationRange::parse(&row.range)
                    .ok_or_else(|| Error::data("MalformedPredictions", format!("unknown range {:?}", row.range)))?;
                let sza: f64 = row
                    .sza
                    .parse()
                    .map_err(|_| Error::data("MalformedPredictions", format!("bad sza {:?}", row.sza)))?;
                let pred = read_grid(pred_path(preds, *n, &chip.time))?.data;
                if pred.dim() != chip.dims() {
                    return Err(Error::data("DimensionMismatch", format!("prediction for {} has shape {:?}", row.time, pred.dim())));
                }
                let truth = chip_labels(chip);
                Ok(truth
                    .indexed_iter()
                    .filter(|(_, &l)| l != PixelLabel::NoData)
                    .map(|((r, c), &l)| {
                        let cover = coast.stratum(&lc, r, c);
                        let truth_cloud = l == PixelLabel::Cloud;
                        EvalSample {
                            range,
                            sza,
                            cover,
                            row: r,
                            col: c,
                            truth_cloud,
                            pred_cloud: pred[(r, c)] > 0.5,
                            suspect: truth_cloud && cover.is_coast(),
                        }
                    })
                    .collect())
            })
            .collect();
        let mut samples = Vec::new();
        for s in per_chip {
            samples.extend(s?);
        }
        let report = evaluate(&samples, lc.grid.dim(), Some(*n))?;
        write_report(&report, out.join(lm_tag(*n)))?;
        reports.push(report);
    }
    Ok(reports)
}

fn cmd_report(a: ReportArgs) -> Result<(), Error> {
    if !a.reports.is_dir() {
        return Err(Error::data("MissingFile", format!("{} is not a directory", a.reports.display())));
    }
    let mut reports = Vec::new();
    for entry in walkdir::WalkDir::new(&a.reports).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::data("MissingFile", e.to_string()))?;
        if entry.file_type().is_file() && entry.file_name() == "report.json" {
            reports.push(read_report(entry.path()).map_err(|e| Error::data("MalformedReport", e.to_string()))?);
        }
    }
    if reports.is_empty() {
        return Err(Error::data("NoTestData", format!("no report.json under {}", a.reports.display())));
    }
    write_global_summary(&reports, &a.out)?;
    Ok(())
}

