//! Confusion matrices, overall accuracy, Cohen's kappa and the breakdowns of
//! an evaluation report (per range, per SZA bin, per cover, spatial maps).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{write_grid, ArchiveError, Grid, GRID_EXT};
use crate::masks::{CoverStratum, PixelLabel};
use crate::partition::IlluminationRange;

/// Width of the SZA bins of the accuracy-versus-illumination curve.
pub const SZA_BIN_DEG: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("dimension mismatch: prediction {pred:?}, truth {truth:?}")]
    DimensionMismatch { pred: (usize, usize), truth: (usize, usize) },
    #[error("no test data")]
    NoTestData,
    #[error("pixel ({row}, {col}) lies outside the {rows}x{cols} map")]
    OutOfBounds { row: usize, col: usize, rows: usize, cols: usize },
    #[error("writing {path}: {msg}")]
    Output { path: String, msg: String },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

/// Cloud is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// Kappa plus a flag for the degenerate case `p_e = 1`, where 0 is returned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    pub degenerate: bool,
}

impl ConfusionMatrix {
    pub fn add(&mut self, pred_cloud: bool, truth_cloud: bool) {
        match (pred_cloud, truth_cloud) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut cm = Self::default();
        for (p, t) in pairs {
            cm.add(p, t);
        }
        cm
    }

    pub fn merge(self, o: Self) -> Self {
        ConfusionMatrix { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Percentage of agreeing pixels.
    pub fn overall_accuracy(&self) -> Result<f64, MetricsError> {
        let n = self.total();
        if n == 0 {
            return Err(MetricsError::EmptyMatrix);
        }
        Ok(100.0 * (self.tp + self.tn) as f64 / n as f64)
    }

    /// `(p_o - p_e) / (1 - p_e)`, evaluated exactly in integers as
    /// `(N (TP + TN) - S) / (N^2 - S)` with `S` the sum of marginal products,
    /// so the only rounding is the final division.
    pub fn cohens_kappa(&self) -> Result<Kappa, MetricsError> {
        let n = self.total() as u128;
        if n == 0 {
            return Err(MetricsError::EmptyMatrix);
        }
        let (tp, fp, fn_, tn) = (self.tp as u128, self.fp as u128, self.fn_ as u128, self.tn as u128);
        let s = (tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn);
        let den = n * n - s;
        if den == 0 {
            return Ok(Kappa { value: 0.0, degenerate: true });
        }
        let agree = n * (tp + tn);
        let value = if agree >= s {
            (agree - s) as f64 / den as f64
        } else {
            -((s - agree) as f64 / den as f64)
        };
        Ok(Kappa { value, degenerate: false })
    }
}

/// Compares a predicted cloud mask with the decoded L2 mask; no-data truth
/// pixels are skipped.
pub fn confusion(pred: &Array2<bool>, truth: &Array2<PixelLabel>) -> Result<ConfusionMatrix, MetricsError> {
    if pred.dim() != truth.dim() {
        return Err(MetricsError::DimensionMismatch { pred: pred.dim(), truth: truth.dim() });
    }
    Ok(ConfusionMatrix::from_pairs(
        pred.iter().zip(truth.iter()).filter_map(|(&p, t)| t.is_cloud().map(|tc| (p, tc))),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub confusion: ConfusionMatrix,
    pub oa: f64,
    pub kappa: f64,
    pub kappa_degenerate: bool,
}

impl Scores {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self, MetricsError> {
        let k = cm.cohens_kappa()?;
        Ok(Scores { confusion: cm, oa: cm.overall_accuracy()?, kappa: k.value, kappa_degenerate: k.degenerate })
    }

    fn maybe(cm: ConfusionMatrix) -> Option<Self> {
        Self::from_confusion(cm).ok()
    }
}

/// One evaluated test pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSample {
    pub range: IlluminationRange,
    pub sza: f64,
    pub cover: CoverStratum,
    pub row: usize,
    pub col: usize,
    pub truth_cloud: bool,
    pub pred_cloud: bool,
    pub suspect: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeScores {
    pub range: IlluminationRange,
    pub scores: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SzaBin {
    pub lo: f64,
    pub hi: f64,
    pub scores: Scores,
}

/// OA per cover stratum; `cover` is `None` for the all-pixel bar and
/// `range` is `None` for the all-range group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverScores {
    pub range: Option<IlluminationRange>,
    pub cover: Option<CoverStratum>,
    pub scores: Option<Scores>,
}

/// Per-pixel fraction of correct labels over all evaluated samples of one
/// range; `None` where no sample fell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMap {
    pub range: IlluminationRange,
    pub rows: usize,
    pub cols: usize,
    pub accuracy: Vec<Option<f64>>,
    pub count: Vec<u64>,
}

impl SpatialMap {
    pub fn to_grid(&self) -> Grid {
        Grid {
            label: format!("accuracy {}", self.range),
            data: Array2::from_shape_fn((self.rows, self.cols), |(r, c)| {
                self.accuracy[r * self.cols + c].unwrap_or(f64::NAN)
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SuspectStats {
    pub pixels: u64,
    /// Suspect pixels (labelled cloud on the coastline) predicted as cloud.
    pub predicted_cloud: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub landmark: Option<u32>,
    /// How the global column aggregates the ranges.
    pub aggregation: String,
    pub global: Scores,
    pub ranges: Vec<RangeScores>,
    pub sza_bins: Vec<SzaBin>,
    pub covers: Vec<CoverScores>,
    pub maps: Vec<SpatialMap>,
    pub suspect: SuspectStats,
}

impl EvaluationReport {
    pub fn range(&self, r: IlluminationRange) -> Option<&Scores> {
        self.ranges.iter().find(|x| x.range == r).and_then(|x| x.scores.as_ref())
    }
}

#[derive(Default, Clone)]
struct Acc {
    ranges: [ConfusionMatrix; 4],
    bins: BTreeMap<i64, ConfusionMatrix>,
    covers: BTreeMap<(Option<usize>, Option<CoverStratum>), ConfusionMatrix>,
    hits: Vec<[u64; 4]>,
    seen: Vec<[u64; 4]>,
    suspect: SuspectStats,
}

impl Acc {
    fn new(pixels: usize) -> Self {
        Acc { hits: vec![[0; 4]; pixels], seen: vec![[0; 4]; pixels], ..Default::default() }
    }

    fn merge(mut self, o: Acc) -> Acc {
        for k in 0..4 {
            self.ranges[k] = self.ranges[k].merge(o.ranges[k]);
        }
        for (b, cm) in o.bins {
            let e = self.bins.entry(b).or_default();
            *e = e.merge(cm);
        }
        for (b, cm) in o.covers {
            let e = self.covers.entry(b).or_default();
            *e = e.merge(cm);
        }
        for (a, b) in self.hits.iter_mut().zip(&o.hits) {
            for k in 0..4 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.seen.iter_mut().zip(&o.seen) {
            for k in 0..4 {
                a[k] += b[k];
            }
        }
        self.suspect.pixels += o.suspect.pixels;
        self.suspect.predicted_cloud += o.suspect.predicted_cloud;
        self
    }
}

/// Builds the full report from evaluated pixels of one landmark whose chips
/// are `dims` in size. The global column pools all pixels.
pub fn evaluate(samples: &[EvalSample], dims: (usize, usize), landmark: Option<u32>) -> Result<EvaluationReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoTestData);
    }
    let (rows, cols) = dims;
    if let Some(s) = samples.iter().find(|s| s.row >= rows || s.col >= cols) {
        return Err(MetricsError::OutOfBounds { row: s.row, col: s.col, rows, cols });
    }
    let acc = samples
        .par_chunks(4096)
        .map(|chunk| {
            let mut a = Acc::new(rows * cols);
            for s in chunk {
                let k = s.range.index();
                a.ranges[k].add(s.pred_cloud, s.truth_cloud);
                a.bins.entry((s.sza / SZA_BIN_DEG).floor() as i64).or_default().add(s.pred_cloud, s.truth_cloud);
                for key in [(None, None), (None, Some(s.cover)), (Some(k), None), (Some(k), Some(s.cover))] {
                    a.covers.entry(key).or_default().add(s.pred_cloud, s.truth_cloud);
                }
                let p = s.row * cols + s.col;
                a.seen[p][k] += 1;
                a.hits[p][k] += (s.pred_cloud == s.truth_cloud) as u64;
                if s.suspect {
                    a.suspect.pixels += 1;
                    a.suspect.predicted_cloud += s.pred_cloud as u64;
                }
            }
            a
        })
        .reduce(|| Acc::new(rows * cols), Acc::merge);

    let global_cm = acc.ranges.iter().fold(ConfusionMatrix::default(), |a, &b| a.merge(b));
    let ranges = IlluminationRange::ALL
        .iter()
        .map(|&r| RangeScores { range: r, scores: Scores::maybe(acc.ranges[r.index()]) })
        .collect();
    let sza_bins = acc
        .bins
        .iter()
        .map(|(&b, &cm)| {
            Ok(SzaBin { lo: b as f64 * SZA_BIN_DEG, hi: (b + 1) as f64 * SZA_BIN_DEG, scores: Scores::from_confusion(cm)? })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let mut covers = Vec::new();
    for range in std::iter::once(None).chain(IlluminationRange::ALL.map(Some)) {
        for cover in std::iter::once(None).chain(CoverStratum::ALL.map(Some)) {
            let cm = acc.covers.get(&(range.map(|r| r.index()), cover)).copied().unwrap_or_default();
            covers.push(CoverScores { range, cover, scores: Scores::maybe(cm) });
        }
    }
    let maps = IlluminationRange::ALL
        .iter()
        .map(|&r| {
            let k = r.index();
            SpatialMap {
                range: r,
                rows,
                cols,
                accuracy: (0..rows * cols)
                    .map(|p| (acc.seen[p][k] > 0).then(|| acc.hits[p][k] as f64 / acc.seen[p][k] as f64))
                    .collect(),
                count: (0..rows * cols).map(|p| acc.seen[p][k]).collect(),
            }
        })
        .collect();
    Ok(EvaluationReport {
        landmark,
        aggregation: "pooled pixels over all ranges".into(),
        global: Scores::from_confusion(global_cm)?,
        ranges,
        sza_bins,
        covers,
        maps,
        suspect: acc.suspect,
    })
}

fn fmt_cell(s: Option<&Scores>) -> String {
    match s {
        Some(s) => format!("{:.2} ({:.2})", s.kappa, s.oa),
        None => "n/a".into(),
    }
}

/// Text table with one row per report: `kappa (OA%)` per range and globally.
pub fn summary_table(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("Kappa statistics and overall accuracy [kappa (OA%)]\n");
    out += &format!("global column: {}\n\n", reports.first().map_or("", |r| r.aggregation.as_str()));
    let header = ["landmark", "high", "medium", "low", "night", "global"];
    let mut rows: Vec<[String; 6]> = vec![header.map(String::from)];
    for r in reports {
        rows.push([
            r.landmark.map_or("-".into(), |n| n.to_string()),
            fmt_cell(r.range(IlluminationRange::High)),
            fmt_cell(r.range(IlluminationRange::Medium)),
            fmt_cell(r.range(IlluminationRange::Low)),
            fmt_cell(r.range(IlluminationRange::Night)),
            fmt_cell(Some(&r.global)),
        ]);
    }
    let widths: Vec<usize> = (0..6).map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    for r in &rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        out += line.join("  ").trim_end();
        out.push('\n');
    }
    out
}

fn out_err(path: &Path, e: impl std::fmt::Display) -> MetricsError {
    MetricsError::Output { path: path.display().to_string(), msg: e.to_string() }
}

fn write_csv<R: Serialize>(path: &Path, records: impl IntoIterator<Item = R>) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| out_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| out_err(path, e))?;
    }
    w.flush().map_err(|e| out_err(path, e))
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    group: &'a str,
    cover: &'a str,
    n: u64,
    tp: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    tn: u64,
    oa: String,
    kappa: String,
    kappa_degenerate: u8,
}

fn score_row<'a>(group: &'a str, cover: &'a str, s: Option<&Scores>) -> ScoreRow<'a> {
    let cm = s.map(|s| s.confusion).unwrap_or_default();
    ScoreRow {
        group,
        cover,
        n: cm.total(),
        tp: cm.tp,
        fp: cm.fp,
        fn_: cm.fn_,
        tn: cm.tn,
        oa: s.map_or(String::new(), |s| format!("{:.6}", s.oa)),
        kappa: s.map_or(String::new(), |s| format!("{:.6}", s.kappa)),
        kappa_degenerate: s.is_some_and(|s| s.kappa_degenerate) as u8,
    }
}

/// Writes `report.json`, `summary.txt`, `ranges.csv`, `sza_bins.csv`,
/// `covers.csv` and one accuracy map grid per range into `dir`.
pub fn write_report(report: &EvaluationReport, dir: impl AsRef<Path>) -> Result<(), MetricsError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| out_err(&json_path, e))?;
    std::fs::write(&json_path, json + "\n").map_err(|e| out_err(&json_path, e))?;
    let txt = dir.join("summary.txt");
    let mut f = std::fs::File::create(&txt).map_err(|e| out_err(&txt, e))?;
    f.write_all(summary_table(std::slice::from_ref(report)).as_bytes()).map_err(|e| out_err(&txt, e))?;

    let mut rows = vec![score_row("global", "all", Some(&report.global))];
    rows.extend(report.ranges.iter().map(|r| score_row(r.range.name(), "all", r.scores.as_ref())));
    write_csv(&dir.join("ranges.csv"), rows)?;

    #[derive(Serialize)]
    struct BinRow {
        sza_lo: f64,
        sza_hi: f64,
        n: u64,
        oa: String,
        kappa: String,
    }
    write_csv(
        &dir.join("sza_bins.csv"),
        report.sza_bins.iter().map(|b| BinRow {
            sza_lo: b.lo,
            sza_hi: b.hi,
            n: b.scores.confusion.total(),
            oa: format!("{:.6}", b.scores.oa),
            kappa: format!("{:.6}", b.scores.kappa),
        }),
    )?;
    write_csv(
        &dir.join("covers.csv"),
        report.covers.iter().map(|c| {
            score_row(c.range.map_or("global", |r| r.name()), c.cover.map_or("all", |c| c.name()), c.scores.as_ref())
        }),
    )?;
    for m in &report.maps {
        write_grid(&m.to_grid(), dir.join(format!("map_{}.{GRID_EXT}", m.range)))?;
    }
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvaluationReport, MetricsError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| out_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| out_err(path, e))
}

/// Histogram of OA (percent) and kappa over landmarks: `bins` equal-width
/// bins on `[0, 100]` and `[-1, 1]`.
pub fn histogram_rows(reports: &[EvaluationReport], bins: usize) -> Vec<(f64, f64, usize, f64, f64, usize)> {
    (0..bins)
        .map(|b| {
            let (olo, ohi) = (100.0 * b as f64 / bins as f64, 100.0 * (b + 1) as f64 / bins as f64);
            let (klo, khi) = (-1.0 + 2.0 * b as f64 / bins as f64, -1.0 + 2.0 * (b + 1) as f64 / bins as f64);
            let last = b + 1 == bins;
            let inside = |v: f64, lo: f64, hi: f64| v >= lo && (v < hi || (last && v <= hi));
            let n_oa = reports.iter().filter(|r| inside(r.global.oa, olo, ohi)).count();
            let n_k = reports.iter().filter(|r| inside(r.global.kappa, klo, khi)).count();
            (olo, ohi, n_oa, klo, khi, n_k)
        })
        .collect()
}

/// Writes `summary.csv` (one row per landmark), `histogram.csv` and
/// `summary.txt` for a set of per-landmark reports.
pub fn write_global_summary(reports: &[EvaluationReport], dir: impl AsRef<Path>) -> Result<(), MetricsError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
    #[derive(Serialize)]
    struct Row {
        landmark: String,
        n: u64,
        oa: String,
        kappa: String,
        oa_high: String,
        kappa_high: String,
        oa_medium: String,
        kappa_medium: String,
        oa_low: String,
        kappa_low: String,
        oa_night: String,
        kappa_night: String,
    }
    let f = |s: Option<&Scores>, k: bool| s.map_or(String::new(), |s| format!("{:.6}", if k { s.kappa } else { s.oa }));
    write_csv(
        &dir.join("summary.csv"),
        reports.iter().map(|r| {
            use IlluminationRange::*;
            Row {
                landmark: r.landmark.map_or("-".into(), |n| n.to_string()),
                n: r.global.confusion.total(),
                oa: f(Some(&r.global), false),
                kappa: f(Some(&r.global), true),
                oa_high: f(r.range(High), false),
                kappa_high: f(r.range(High), true),
                oa_medium: f(r.range(Medium), false),
                kappa_medium: f(r.range(Medium), true),
                oa_low: f(r.range(Low), false),
                kappa_low: f(r.range(Low), true),
                oa_night: f(r.range(Night), false),
                kappa_night: f(r.range(Night), true),
            }
        }),
    )?;
    #[derive(Serialize)]
    struct HistRow {
        oa_lo: f64,
        oa_hi: f64,
        oa_count: usize,
        kappa_lo: f64,
        kappa_hi: f64,
        kappa_count: usize,
    }
    write_csv(
        &dir.join("histogram.csv"),
        histogram_rows(reports, 20).into_iter().map(|(oa_lo, oa_hi, oa_count, kappa_lo, kappa_hi, kappa_count)| HistRow {
            oa_lo,
            oa_hi,
            oa_count,
            kappa_lo,
            kappa_hi,
            kappa_count,
        }),
    )?;
    let txt = dir.join("summary.txt");
    std::fs::write(&txt, summary_table(reports)).map_err(|e| out_err(&txt, e))
}
