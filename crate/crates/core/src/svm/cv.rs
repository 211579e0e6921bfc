//! Stratified v-fold cross-validated grid search over `(C, gamma)`.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::smo::{SmoParams, SvmFit};
use super::SvmError;
use crate::num::Real;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint<T> {
    pub c: T,
    pub gamma: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell<T> {
    pub point: GridPoint<T>,
    /// Held-out accuracy in `[0, 1]`, one per fold.
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// Fold trainings that stopped at the iteration cap.
    pub unconverged_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport<T> {
    pub folds: usize,
    pub seed: u64,
    /// Every evaluated cell, in the order the grid was given.
    pub cells: Vec<GridCell<T>>,
    pub chosen: GridPoint<T>,
    pub chosen_accuracy: f64,
    /// Number of cells sharing the best mean accuracy.
    pub tied: usize,
    pub tie_break: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions<T> {
    pub folds: usize,
    pub seed: u64,
    pub tol: T,
    pub cache_mb: usize,
}

impl<T: Real> Default for CvOptions<T> {
    fn default() -> Self {
        CvOptions { folds: 10, seed: 0, tol: T::lit(1e-3), cache_mb: 100 }
    }
}

/// `C in {0.1, 1, 10, 100, 1000}` crossed with `gamma in {2^-6, ..., 2^3}`.
pub fn default_grid<T: Real>() -> Vec<GridPoint<T>> {
    let cs = [0.1, 1.0, 10.0, 100.0, 1000.0];
    cs.iter()
        .flat_map(|&c| (-6..=3).map(move |e| GridPoint { c: T::lit(c), gamma: T::lit(2f64.powi(e)) }))
        .collect()
}

/// Parses a grid file of `c = v1, v2, ...` and `gamma = ...` lines; the grid
/// is their cross product. `#` starts a comment.
pub fn parse_grid(text: &str) -> Result<Vec<GridPoint<f64>>, SvmError> {
    let mut cs = Vec::new();
    let mut gammas = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || SvmError::InvalidParameter(format!("grid line {}: {line:?}", no + 1));
        let (key, values) = line.split_once('=').ok_or_else(bad)?;
        let parsed = values
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().ok().filter(|v| *v > 0.0 && v.is_finite()).ok_or_else(bad))
            .collect::<Result<Vec<_>, _>>()?;
        match key.trim().to_ascii_lowercase().as_str() {
            "c" => cs.extend(parsed),
            "gamma" => gammas.extend(parsed),
            _ => return Err(bad()),
        }
    }
    if cs.is_empty() || gammas.is_empty() {
        return Err(SvmError::InvalidParameter("grid needs at least one C and one gamma".into()));
    }
    Ok(cs.iter().flat_map(|&c| gammas.iter().map(move |&gamma| GridPoint { c, gamma })).collect())
}

/// Fold index per sample. Each class is shuffled with its own stream and dealt
/// round-robin, the negative class continuing where the positive one stopped,
/// so fold sizes differ by at most one overall and per class.
pub fn stratified_folds(y: &[i8], folds: usize, seed: u64) -> Vec<usize> {
    let mut assignment = vec![0; y.len()];
    let mut offset = 0;
    for (tag, class) in [(1u64, 1i8), (2, -1)] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        let mut stream = rng::stream(seed, &[0xF01D, tag]);
        rng::shuffle(&mut idx, &mut stream);
        for (pos, &i) in idx.iter().enumerate() {
            assignment[i] = (offset + pos) % folds;
        }
        offset = (offset + idx.len()) % folds;
    }
    assignment
}

fn select_rows<T: Clone>(x: ArrayView2<T>, idx: &[usize]) -> Array2<T> {
    x.select(Axis(0), idx)
}

/// Evaluates every grid point by stratified v-fold CV, picks the best mean
/// accuracy (ties: smallest C, then smallest gamma) and retrains it on all data.
pub fn cv_grid_search<T: Real>(
    x: ArrayView2<T>,
    y: &[i8],
    grid: &[GridPoint<T>],
    opts: &CvOptions<T>,
) -> Result<(SvmFit<T>, GridSearchReport<T>), SvmError> {
    if x.nrows() != y.len() {
        return Err(SvmError::DimensionMismatch { expected: x.nrows(), found: y.len() });
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if opts.folds < 2 {
        return Err(SvmError::InvalidParameter(format!("need at least 2 folds, got {}", opts.folds)));
    }
    if grid.is_empty() {
        return Err(SvmError::InvalidParameter("empty grid".into()));
    }
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos < opts.folds || n_neg < opts.folds {
        return Err(SvmError::TooFewSamples(format!(
            "{n_pos} cloud and {n_neg} clear samples for {} folds",
            opts.folds
        )));
    }

    let fold_of = stratified_folds(y, opts.folds, opts.seed);
    let splits: Vec<(Array2<T>, Vec<i8>, Array2<T>, Vec<i8>)> = (0..opts.folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| fold_of[i] == f);
            (
                select_rows(x, &train),
                train.iter().map(|&i| y[i]).collect(),
                select_rows(x, &test),
                test.iter().map(|&i| y[i]).collect(),
            )
        })
        .collect();

    let tasks: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|g| (0..opts.folds).map(move |f| (g, f))).collect();
    let outcomes = tasks
        .par_iter()
        .map(|&(g, f)| {
            let (xt, yt, xv, yv) = &splits[f];
            let params = SmoParams { tol: opts.tol, cache_mb: opts.cache_mb, ..SmoParams::new(grid[g].c, grid[g].gamma) };
            let fit = params.fit(xt.view(), yt)?;
            let dec = fit.model.decision_batch(xv.view())?;
            let hits = dec.iter().zip(yv).filter(|(d, &t)| (**d >= T::zero()) == (t > 0)).count();
            Ok((hits as f64 / yv.len() as f64, fit.stats.converged))
        })
        .collect::<Result<Vec<_>, SvmError>>()?;

    let cells: Vec<GridCell<T>> = grid
        .iter()
        .enumerate()
        .map(|(g, &point)| {
            let block = &outcomes[g * opts.folds..(g + 1) * opts.folds];
            let fold_accuracy: Vec<f64> = block.iter().map(|o| o.0).collect();
            GridCell {
                point,
                mean_accuracy: fold_accuracy.iter().sum::<f64>() / opts.folds as f64,
                fold_accuracy,
                unconverged_folds: block.iter().filter(|o| !o.1).count(),
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (cells[a].point, cells[b].point);
        pa.c.partial_cmp(&pb.c)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(pa.gamma.partial_cmp(&pb.gamma).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut best = order[0];
    for &k in &order[1..] {
        if cells[k].mean_accuracy > cells[best].mean_accuracy + 1e-12 {
            best = k;
        }
    }
    let best_acc = cells[best].mean_accuracy;
    let tied = cells.iter().filter(|c| (c.mean_accuracy - best_acc).abs() <= 1e-12).count();
    let chosen = cells[best].point;

    let params = SmoParams { tol: opts.tol, cache_mb: opts.cache_mb, ..SmoParams::new(chosen.c, chosen.gamma) };
    let fit = params.fit(x, y)?;
    let report = GridSearchReport {
        folds: opts.folds,
        seed: opts.seed,
        cells,
        chosen,
        chosen_accuracy: best_acc,
        tied,
        tie_break: "smallest C, then smallest gamma".into(),
    };
    Ok((fit, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, sep: f64, seed: u64) -> (Array2<f64>, Vec<i8>) {
        let mut r = rng::stream(seed, &[]);
        let y: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, _)| {
            let centre = if y[i] > 0 { 0.5 + sep / 2.0 } else { 0.5 - sep / 2.0 };
            centre + r.gen_range(-0.1..0.1)
        });
        (x, y)
    }

    #[test]
    fn folds_are_stratified_and_balanced() {
        let y: Vec<i8> = (0..53).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let folds = stratified_folds(&y, 5, 3);
        assert_eq!(folds, stratified_folds(&y, 5, 3));
        let sizes: Vec<usize> = (0..5).map(|f| folds.iter().filter(|&&k| k == f).count()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for class in [1, -1] {
            let per: Vec<usize> =
                (0..5).map(|f| (0..53).filter(|&i| folds[i] == f && y[i] == class).count()).collect();
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn singleton_grid_matches_plain_training() {
        let (x, y) = blobs(60, 0.5, 1);
        let grid = [GridPoint { c: 10.0, gamma: 2.0 }];
        let (fit, report) = cv_grid_search(x.view(), &y, &grid, &CvOptions { folds: 5, ..Default::default() }).unwrap();
        assert_eq!(report.chosen, grid[0]);
        let direct = SmoParams::new(10.0, 2.0).fit(x.view(), &y).unwrap();
        assert_eq!(fit.model, direct.model);
    }

    #[test]
    fn separable_data_reaches_full_cv_accuracy() {
        let (x, y) = blobs(80, 0.6, 2);
        let grid = [GridPoint { c: 0.1, gamma: 0.015625 }, GridPoint { c: 10.0, gamma: 1.0 }];
        let (_, report) = cv_grid_search(x.view(), &y, &grid, &CvOptions::default()).unwrap();
        assert_eq!(report.chosen_accuracy, 1.0);
        assert_eq!(report.cells.len(), 2);
        assert!(report.cells.iter().all(|c| c.fold_accuracy.len() == 10));
    }

    #[test]
    fn ties_prefer_small_c_then_small_gamma() {
        let (x, y) = blobs(40, 0.6, 3);
        let grid = [
            GridPoint { c: 100.0, gamma: 1.0 },
            GridPoint { c: 10.0, gamma: 2.0 },
            GridPoint { c: 10.0, gamma: 1.0 },
        ];
        let (_, report) = cv_grid_search(x.view(), &y, &grid, &CvOptions { folds: 4, ..Default::default() }).unwrap();
        assert_eq!(report.tied, 3);
        assert_eq!(report.chosen, GridPoint { c: 10.0, gamma: 1.0 });
    }

    #[test]
    fn guards_and_grid_parsing() {
        let (x, y) = blobs(12, 0.6, 4);
        let grid = default_grid::<f64>();
        assert_eq!(grid.len(), 50);
        assert!(matches!(
            cv_grid_search(x.view(), &y, &grid, &CvOptions::default()),
            Err(SvmError::TooFewSamples(_))
        ));
        let g = parse_grid("# demo\nc = 1, 10\ngamma = 0.5 2 # trailing\n").unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[1], GridPoint { c: 1.0, gamma: 2.0 });
        assert!(parse_grid("c = 1\n").is_err());
        assert!(parse_grid("c = -1\ngamma = 1").is_err());
    }
}
