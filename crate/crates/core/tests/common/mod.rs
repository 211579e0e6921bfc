//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// Two interleaving half circles with Gaussian jitter; labels +1 / -1.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> (Array2<f64>, Vec<i8>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise).unwrap();
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let t = std::f64::consts::PI * rng.gen::<f64>();
        let (px, py, label) = if i % 2 == 0 { (t.cos(), t.sin(), 1) } else { (1.0 - t.cos(), 0.5 - t.sin(), -1) };
        x[(i, 0)] = px + jitter.sample(&mut rng);
        x[(i, 1)] = py + jitter.sample(&mut rng);
        y.push(label);
    }
    (x, y)
}

pub fn rbf_matrix(x: &Array2<f64>, gamma: f64) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let d2: f64 = x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        (-gamma * d2).exp()
    })
}

/// Plain SMO on a dense kernel matrix: the pair is the maximal violating
/// pair (first-order selection), the bias is the average over free vectors.
pub struct ReferenceSvm {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub kernel: Array2<f64>,
    pub y: Vec<f64>,
}

impl ReferenceSvm {
    pub fn train(x: &Array2<f64>, y: &[i8], c: f64, gamma: f64, tol: f64) -> Self {
        let n = x.nrows();
        let k = rbf_matrix(x, gamma);
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let mut alpha = vec![0.0; n];
        // gradient of 1/2 a'Qa - e'a
        let mut g = vec![-1.0; n];
        for _ in 0..1_000_000 {
            let up = |t: usize| (yf[t] > 0.0 && alpha[t] < c) || (yf[t] < 0.0 && alpha[t] > 0.0);
            let low = |t: usize| (yf[t] > 0.0 && alpha[t] > 0.0) || (yf[t] < 0.0 && alpha[t] < c);
            let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
            let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
            for t in 0..n {
                let v = -yf[t] * g[t];
                if up(t) && v > gmax {
                    gmax = v;
                    i = t;
                }
                if low(t) && v < gmin {
                    gmin = v;
                    j = t;
                }
            }
            if gmax - gmin < tol {
                break;
            }
            // analytic two-variable step along y_i d_i + y_j d_j = 0
            let eta = (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]).max(1e-12);
            let step = (gmax - gmin) / eta;
            // a_i moves by y_i * s, a_j by -y_j * s; clip s to the box
            let room = |t: usize, dir: f64| if dir > 0.0 { c - alpha[t] } else { alpha[t] };
            let s = step.min(room(i, yf[i])).min(room(j, -yf[j]));
            let (di, dj) = (yf[i] * s, -yf[j] * s);
            alpha[i] += di;
            alpha[j] += dj;
            for t in 0..n {
                g[t] += yf[t] * (yf[i] * k[(t, i)] * di + yf[j] * k[(t, j)] * dj);
            }
        }
        let mut free = Vec::new();
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for t in 0..n {
            let v = -yf[t] * g[t];
            if alpha[t] > 1e-12 && alpha[t] < c - 1e-12 {
                free.push(v);
            } else if (yf[t] > 0.0) == (alpha[t] <= 1e-12) {
                lo = lo.max(v);
            } else {
                hi = hi.min(v);
            }
        }
        let bias = if free.is_empty() { (lo + hi) / 2.0 } else { free.iter().sum::<f64>() / free.len() as f64 };
        ReferenceSvm { alpha, bias, kernel: k, y: yf }
    }

    /// `sum(a) - 1/2 a'Qa`.
    pub fn dual_objective(&self) -> f64 {
        dual_objective(&self.kernel, &self.y, &self.alpha)
    }

    pub fn decision_train(&self, t: usize) -> f64 {
        (0..self.y.len()).map(|s| self.alpha[s] * self.y[s] * self.kernel[(s, t)]).sum::<f64>() + self.bias
    }
}

pub fn dual_objective(k: &Array2<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[(i, j)];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Largest KKT residual of a dual solution, as the gap between the most
/// violating up and low candidates of `-y_t grad_t`.
pub fn kkt_gap(k: &Array2<f64>, y: &[f64], alpha: &[f64], c: f64) -> f64 {
    let n = y.len();
    let eps = 1e-12 * c.max(1.0);
    let (mut m_up, mut m_low) = (f64::NEG_INFINITY, f64::INFINITY);
    for t in 0..n {
        let grad: f64 = (0..n).map(|s| y[t] * y[s] * k[(t, s)] * alpha[s]).sum::<f64>() - 1.0;
        let v = -y[t] * grad;
        let up = (y[t] > 0.0 && alpha[t] < c - eps) || (y[t] < 0.0 && alpha[t] > eps);
        let low = (y[t] > 0.0 && alpha[t] > eps) || (y[t] < 0.0 && alpha[t] < c - eps);
        if up {
            m_up = m_up.max(v);
        }
        if low {
            m_low = m_low.min(v);
        }
    }
    (m_up - m_low).max(0.0)
}

/// Counts straight from label pairs: (tp, fp, fn, tn), cloud = positive.
pub fn brute_counts(pairs: &[(bool, bool)]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for &(pred, truth) in pairs {
        match (pred, truth) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

/// OA (percent) and kappa by counting agreements and marginals pair by pair.
pub fn brute_scores(pairs: &[(bool, bool)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let agree = pairs.iter().filter(|(p, t)| p == t).count() as f64;
    let pred_yes = pairs.iter().filter(|(p, _)| *p).count() as f64;
    let truth_yes = pairs.iter().filter(|(_, t)| *t).count() as f64;
    let po = agree / n;
    let pe = (pred_yes / n) * (truth_yes / n) + (1.0 - pred_yes / n) * (1.0 - truth_yes / n);
    let kappa = if pe == 1.0 { 0.0 } else { (po - pe) / (1.0 - pe) };
    (100.0 * po, kappa)
}

/// Shift-and-OR dilation of a boolean grid by the 3x3 neighbourhood.
pub fn dilate3(g: &Array2<bool>) -> Array2<bool> {
    let (rows, cols) = g.dim();
    let mut out = g.clone();
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            for r in 0..rows as i64 {
                for c in 0..cols as i64 {
                    let (sr, sc) = (r + dr, c + dc);
                    if sr >= 0 && sc >= 0 && sr < rows as i64 && sc < cols as i64 && g[(sr as usize, sc as usize)] {
                        out[(r as usize, c as usize)] = true;
                    }
                }
            }
        }
    }
    out
}

/// Coastline as land touching dilated water or water touching dilated land.
pub fn coast_by_dilation(land: &Array2<bool>) -> Array2<bool> {
    let water = land.mapv(|b| !b);
    let (dl, dw) = (dilate3(land), dilate3(&water));
    Array2::from_shape_fn(land.dim(), |p| (land[p] && dw[p]) || (water[p] && dl[p]))
}

/// Mean and population std over the clipped window by explicit listing.
pub fn brute_window(grid: &Array2<f64>, valid: Option<&Array2<bool>>, half: usize) -> Array2<Option<(f64, f64)>> {
    let (rows, cols) = grid.dim();
    let h = half as i64;
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let mut vals = Vec::new();
        for rr in (r as i64 - h)..=(r as i64 + h) {
            for cc in (c as i64 - h)..=(c as i64 + h) {
                if rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                    continue;
                }
                let p = (rr as usize, cc as usize);
                if valid.map_or(true, |v| v[p]) {
                    vals.push(grid[p]);
                }
            }
        }
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some((mean, var.sqrt()))
    })
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
