//! Soft-margin binary SVM with an RBF kernel.
//!
//! Labels are `+1` (cloud) and `-1` (clear). Training uses sequential minimal
//! optimization ([`smo`]); hyperparameters come from a stratified v-fold grid
//! search ([`cv`]). Models persist in a plain text format ([`io`]).

pub mod cv;
pub mod io;
pub mod smo;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::features::{MinMaxScaler, Regime};
use crate::num::Real;

pub use cv::{cv_grid_search, default_grid, parse_grid, stratified_folds, CvOptions, GridCell, GridPoint, GridSearchReport};
pub use smo::{max_kkt_violation, smo_train, SmoParams, SolverStats, SvmFit};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SvmError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training data contains a single class")]
    SingleClassInput,
    #[error("label {0} is not +1 or -1")]
    InvalidLabel(i8),
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
}

/// `exp(-gamma * |x - z|^2)`.
pub fn rbf_kernel<T: Real>(x: &[T], z: &[T], gamma: T) -> Result<T, SvmError> {
    if x.len() != z.len() {
        return Err(SvmError::DimensionMismatch { expected: x.len(), found: z.len() });
    }
    if !(gamma > T::zero()) {
        return Err(SvmError::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    Ok(rbf(x.iter().copied(), z.iter().copied(), gamma))
}

#[inline]
pub(crate) fn rbf<T: Real>(x: impl Iterator<Item = T>, z: impl Iterator<Item = T>, gamma: T) -> T {
    let d2 = x.zip(z).fold(T::zero(), |acc, (a, b)| acc + (a - b) * (a - b));
    (-gamma * d2).exp()
}

/// Trained classifier: `f(x) = sum_i coef_i * k(sv_i, x) + bias`, with
/// `coef_i = alpha_i * y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel<T> {
    /// Feature regime the model was trained for; `None` for free-form data.
    pub regime: Option<Regime>,
    pub c: T,
    pub gamma: T,
    pub bias: T,
    /// One support vector per row.
    pub support_vectors: Array2<T>,
    pub dual_coef: Vec<T>,
    /// Scaler fitted on the training split; inputs to [`SvmModel::decision`]
    /// are expected to be scaled already.
    pub scaler: MinMaxScaler<T>,
}

impl<T: Real> SvmModel<T> {
    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    pub fn n_sv(&self) -> usize {
        self.support_vectors.nrows()
    }

    /// Decision value for an already-scaled input.
    pub fn decision(&self, x: &[T]) -> Result<T, SvmError> {
        if x.len() != self.dim() {
            return Err(SvmError::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        Ok(self.decision_view(ArrayView1::from(x)))
    }

    pub(crate) fn decision_view(&self, x: ArrayView1<T>) -> T {
        self.support_vectors
            .rows()
            .into_iter()
            .zip(&self.dual_coef)
            .fold(self.bias, |acc, (sv, &a)| {
                acc + a * rbf(sv.iter().copied(), x.iter().copied(), self.gamma)
            })
    }

    /// Cloud iff `f(x) >= 0`.
    pub fn predict(&self, x: &[T]) -> Result<bool, SvmError> {
        Ok(self.decision(x)? >= T::zero())
    }

    /// Scales a raw feature vector with the model's scaler, then classifies.
    pub fn predict_raw(&self, raw: &[T]) -> Result<bool, SvmError> {
        let mut x = raw.to_vec();
        self.scaler
            .apply_row(&mut x)
            .map_err(|_| SvmError::DimensionMismatch { expected: self.dim(), found: raw.len() })?;
        self.predict(&x)
    }

    /// Decision values for every row of an already-scaled matrix.
    pub fn decision_batch(&self, x: ArrayView2<T>) -> Result<Vec<T>, SvmError> {
        if x.ncols() != self.dim() {
            return Err(SvmError::DimensionMismatch { expected: self.dim(), found: x.ncols() });
        }
        Ok(x.rows().into_iter().map(|r| self.decision_view(r)).collect())
    }
}
