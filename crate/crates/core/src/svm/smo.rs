//! Sequential minimal optimization for the C-SVC dual
//!
//! ```text
//! min_a  1/2 a'Qa - e'a   s.t.  y'a = 0,  0 <= a_i <= C,   Q_ij = y_i y_j k(x_i, x_j)
//! ```
//!
//! Working pairs are chosen with second-order (curvature-aware) selection:
//! `i` is the maximal violator, `j` maximizes the guaranteed objective
//! decrease for the pair. No shrinking. Kernel rows are cached with an LRU
//! bound.

use std::rc::Rc;

use ndarray::{Array2, ArrayView2};

use super::{rbf, SvmError, SvmModel};
use crate::features::MinMaxScaler;
use crate::num::Real;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams<T> {
    pub c: T,
    pub gamma: T,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: T,
    /// Iteration cap; defaults to `100 * n`.
    pub max_iter: Option<usize>,
    /// Kernel row cache budget in MiB.
    pub cache_mb: usize,
    /// Keep the dual objective after every iteration in [`SolverStats::objective_trace`].
    pub record_objective: bool,
}

impl<T: Real> SmoParams<T> {
    pub fn new(c: T, gamma: T) -> Self {
        SmoParams {
            c,
            gamma,
            tol: T::lit(1e-3),
            max_iter: None,
            cache_mb: 200,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverStats<T> {
    pub iterations: usize,
    /// False when the iteration cap was hit; the model is the last iterate.
    pub converged: bool,
    /// Dual objective `sum(a) - 1/2 a'Qa` (maximization form).
    pub dual_objective: T,
    /// Final `m(a) - M(a)` gap of the maximal violating pair.
    pub gap: T,
    pub objective_trace: Vec<T>,
}

/// A trained model plus the full dual solution on the training set.
#[derive(Debug, Clone)]
pub struct SvmFit<T> {
    pub model: SvmModel<T>,
    /// `alpha_i` for every training sample (zeros included).
    pub alpha: Vec<T>,
    pub stats: SolverStats<T>,
}

struct KernelCache<'a, T> {
    x: ArrayView2<'a, T>,
    gamma: T,
    rows: Vec<Option<Rc<[T]>>>,
    stamp: Vec<u64>,
    clock: u64,
    cached: usize,
    capacity: usize,
}

impl<'a, T: Real> KernelCache<'a, T> {
    fn new(x: ArrayView2<'a, T>, gamma: T, cache_mb: usize) -> Self {
        let n = x.nrows();
        let row_bytes = n.max(1) * std::mem::size_of::<T>();
        let capacity = ((cache_mb << 20) / row_bytes).max(2);
        KernelCache {
            x,
            gamma,
            rows: vec![None; n],
            stamp: vec![0; n],
            clock: 0,
            cached: 0,
            capacity,
        }
    }

    fn row(&mut self, i: usize) -> Rc<[T]> {
        self.clock += 1;
        self.stamp[i] = self.clock;
        if let Some(r) = &self.rows[i] {
            return Rc::clone(r);
        }
        if self.cached >= self.capacity {
            let victim = (0..self.rows.len())
                .filter(|&k| k != i && self.rows[k].is_some())
                .min_by_key(|&k| self.stamp[k])
                .expect("cache holds at least one other row");
            self.rows[victim] = None;
            self.cached -= 1;
        }
        let xi = self.x.row(i);
        let row: Rc<[T]> = self
            .x
            .rows()
            .into_iter()
            .map(|xt| rbf(xi.iter().copied(), xt.iter().copied(), self.gamma))
            .collect();
        self.rows[i] = Some(Rc::clone(&row));
        self.cached += 1;
        row
    }
}

fn validate<T: Real>(x: ArrayView2<T>, y: &[i8], p: &SmoParams<T>) -> Result<(), SvmError> {
    if x.nrows() != y.len() {
        return Err(SvmError::DimensionMismatch { expected: x.nrows(), found: y.len() });
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if y.len() < 2 {
        return Err(SvmError::TooFewSamples(format!("{} sample(s), need at least 2", y.len())));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(SvmError::SingleClassInput);
    }
    if !(p.c > T::zero() && p.gamma > T::zero() && p.tol > T::zero()) {
        return Err(SvmError::InvalidParameter(format!(
            "C, gamma and tol must be positive (C={}, gamma={}, tol={})",
            p.c, p.gamma, p.tol
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SvmError::InvalidParameter("non-finite feature value".into()));
    }
    Ok(())
}

/// Trains with default tolerance and cache settings.
pub fn smo_train<T: Real>(x: ArrayView2<T>, y: &[i8], c: T, gamma: T, tol: T) -> Result<SvmFit<T>, SvmError> {
    SmoParams { tol, ..SmoParams::new(c, gamma) }.fit(x, y)
}

impl<T: Real> SmoParams<T> {
    pub fn fit(&self, x: ArrayView2<T>, y: &[i8]) -> Result<SvmFit<T>, SvmError> {
        validate(x, y, self)?;
        let n = y.len();
        let c = self.c;
        let tau = T::lit(TAU);
        let yf: Vec<T> = y.iter().map(|&v| T::lit(v as f64)).collect();
        let mut alpha = vec![T::zero(); n];
        let mut grad = vec![-T::one(); n];
        // k(x, x) = 1 for the RBF kernel, so Q_ii = 1.
        let qd = T::one();
        let mut cache = KernelCache::new(x, self.gamma, self.cache_mb);
        let max_iter = self.max_iter.unwrap_or(100 * n).max(1);

        let mut objective = T::zero(); // minimization form, f(0) = 0
        let mut trace = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        let mut gap;

        let in_up = |a: T, yi: i8| if yi > 0 { a < c } else { a > T::zero() };
        let in_low = |a: T, yi: i8| if yi > 0 { a > T::zero() } else { a < c };

        loop {
            // first index: maximal violator in I_up
            let mut gmax = T::neg_infinity();
            let mut i_sel = None;
            for t in 0..n {
                if in_up(alpha[t], y[t]) {
                    let v = -yf[t] * grad[t];
                    if v >= gmax {
                        gmax = v;
                        i_sel = Some(t);
                    }
                }
            }
            let Some(i) = i_sel else {
                gap = T::zero();
                converged = true;
                break;
            };
            let ki = cache.row(i);

            // second index: best second-order decrease within I_low
            let mut gmax2 = T::neg_infinity();
            let mut best = T::infinity();
            let mut j_sel = None;
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let v = yf[t] * grad[t];
                if v >= gmax2 {
                    gmax2 = v;
                }
                let diff = gmax + v;
                if diff > T::zero() {
                    let quad = qd + qd - T::lit(2.0) * ki[t];
                    let quad = if quad > T::zero() { quad } else { tau };
                    let obj = -(diff * diff) / quad;
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            }
            gap = gmax + gmax2;
            if gap < self.tol || j_sel.is_none() {
                converged = gap < self.tol;
                break;
            }
            if iterations >= max_iter {
                break;
            }
            let j = j_sel.expect("checked above");
            let kj = cache.row(j);
            let kij = ki[j];

            let (old_i, old_j) = (alpha[i], alpha[j]);
            let (mut ai, mut aj) = (old_i, old_j);
            if y[i] != y[j] {
                let quad = qd + qd - T::lit(2.0) * kij;
                let quad = if quad > T::zero() { quad } else { tau };
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = ai - aj;
                ai += delta;
                aj += delta;
                if diff > T::zero() {
                    if aj < T::zero() {
                        aj = T::zero();
                        ai = diff;
                    }
                } else if ai < T::zero() {
                    ai = T::zero();
                    aj = -diff;
                }
                if diff > T::zero() {
                    if ai > c {
                        ai = c;
                        aj = c - diff;
                    }
                } else if aj > c {
                    aj = c;
                    ai = c + diff;
                }
            } else {
                let quad = qd + qd - T::lit(2.0) * kij;
                let quad = if quad > T::zero() { quad } else { tau };
                let delta = (grad[i] - grad[j]) / quad;
                let sum = ai + aj;
                ai -= delta;
                aj += delta;
                if sum > c {
                    if ai > c {
                        ai = c;
                        aj = sum - c;
                    }
                } else if aj < T::zero() {
                    aj = T::zero();
                    ai = sum;
                }
                if sum > c {
                    if aj > c {
                        aj = c;
                        ai = sum - c;
                    }
                } else if ai < T::zero() {
                    ai = T::zero();
                    aj = sum;
                }
            }
            alpha[i] = ai;
            alpha[j] = aj;
            let di = ai - old_i;
            let dj = aj - old_j;

            // exact change of the (minimized) objective for the pair update
            let qij = yf[i] * yf[j] * kij;
            let change = grad[i] * di
                + grad[j] * dj
                + T::lit(0.5) * (qd * di * di + qd * dj * dj)
                + qij * di * dj;
            debug_assert!(
                change <= T::lit(1e-9) * (T::one() + objective.abs()),
                "dual objective decreased: change {change}"
            );
            objective += change;
            if self.record_objective {
                trace.push(-objective);
            }

            for t in 0..n {
                grad[t] += yf[t] * (yf[i] * ki[t] * di + yf[j] * kj[t] * dj);
            }
            iterations += 1;
        }

        if !converged {
            log::warn!(
                "SMO stopped after {iterations} iterations without reaching tol {} (gap {gap})",
                self.tol
            );
        }

        // bias: average over free vectors, else midpoint of the feasible interval
        let (mut ub, mut lb) = (T::infinity(), T::neg_infinity());
        let (mut sum_free, mut n_free) = (T::zero(), 0usize);
        for t in 0..n {
            let yg = yf[t] * grad[t];
            if alpha[t] >= c {
                if y[t] < 0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= T::zero() {
                if y[t] > 0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 {
            sum_free / T::lit(n_free as f64)
        } else {
            (ub + lb) / T::lit(2.0)
        };

        let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > T::zero()).collect();
        let d = x.ncols();
        let support_vectors = Array2::from_shape_fn((sv.len(), d), |(k, f)| x[(sv[k], f)]);
        let dual_coef = sv.iter().map(|&t| alpha[t] * yf[t]).collect();
        let dual_objective = alpha
            .iter()
            .zip(&grad)
            .fold(T::zero(), |acc, (&a, &g)| acc - T::lit(0.5) * a * (g - T::one()));

        Ok(SvmFit {
            model: SvmModel {
                regime: None,
                c,
                gamma: self.gamma,
                bias: -rho,
                support_vectors,
                dual_coef,
                scaler: MinMaxScaler::identity(d),
            },
            alpha,
            stats: SolverStats {
                iterations,
                converged,
                dual_objective,
                gap,
                objective_trace: trace,
            },
        })
    }
}

/// Largest violation of the soft-margin KKT conditions over a training set,
/// measured on the margin `y_i f(x_i)`.
pub fn max_kkt_violation<T: Real>(model: &SvmModel<T>, x: ArrayView2<T>, y: &[i8], alpha: &[T]) -> T {
    x.rows()
        .into_iter()
        .zip(y)
        .zip(alpha)
        .map(|((row, &yi), &a)| {
            let m = T::lit(yi as f64) * model.decision_view(row);
            if a <= T::zero() {
                (T::one() - m).max(T::zero())
            } else if a >= model.c {
                (m - T::one()).max(T::zero())
            } else {
                (m - T::one()).abs()
            }
        })
        .fold(T::zero(), T::max)
}
