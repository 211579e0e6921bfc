//! Plain-text model format.
//!
//! ```text
//! version 1
//! regime day
//! C 1.0000000000000000e1
//! gamma ...
//! bias ...
//! n_sv 2
//! scaler.min v1 v2 ...
//! scaler.max v1 v2 ...
//! sv v1 v2 ...          (n_sv lines)
//! dual_coef a1 a2 ...
//! ```
//!
//! Numbers carry 17 significant digits, so `f64` values round-trip exactly.

use std::path::Path;

use ndarray::Array2;

use super::{SvmError, SvmModel};
use crate::features::{MinMaxScaler, Regime};
use crate::num::{fmt_exact, parse_exact, Real};

pub const MODEL_VERSION: u32 = 1;

fn join<T: Real>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(fmt_exact).collect::<Vec<_>>().join(" ")
}

pub fn model_to_string<T: Real>(m: &SvmModel<T>) -> String {
    let mut s = String::new();
    let mut line = |l: String| {
        s.push_str(l.trim_end());
        s.push('\n');
    };
    line(format!("version {MODEL_VERSION}"));
    line(format!("regime {}", m.regime.map_or("generic", Regime::name)));
    line(format!("C {}", fmt_exact(m.c)));
    line(format!("gamma {}", fmt_exact(m.gamma)));
    line(format!("bias {}", fmt_exact(m.bias)));
    line(format!("n_sv {}", m.n_sv()));
    line(format!("scaler.min {}", join(m.scaler.min.iter().copied())));
    line(format!("scaler.max {}", join(m.scaler.max.iter().copied())));
    for sv in m.support_vectors.rows() {
        line(format!("sv {}", join(sv.iter().copied())));
    }
    line(format!("dual_coef {}", join(m.dual_coef.iter().copied())));
    s
}

pub fn model_from_str<T: Real>(text: &str) -> Result<SvmModel<T>, SvmError> {
    let corrupt = |what: &str| SvmError::CorruptModel(what.to_string());
    let mut lines = text.lines();
    let mut field = |key: &str| -> Result<Vec<&str>, SvmError> {
        let l = lines.next().ok_or_else(|| corrupt(&format!("missing field {key}")))?;
        let mut parts = l.split_ascii_whitespace();
        if parts.next() != Some(key) {
            return Err(corrupt(&format!("expected field {key}, found {l:?}")));
        }
        Ok(parts.collect())
    };
    let numbers = |key: &str, v: Vec<&str>| -> Result<Vec<T>, SvmError> {
        v.into_iter()
            .map(|s| parse_exact::<T>(s).ok_or_else(|| corrupt(&format!("bad number {s:?} in {key}"))))
            .collect()
    };
    let scalar = |key: &str, v: Vec<&str>| -> Result<T, SvmError> {
        match numbers(key, v)?.as_slice() {
            [x] => Ok(*x),
            _ => Err(corrupt(&format!("{key} takes one value"))),
        }
    };

    let version = field("version")?;
    if version != [MODEL_VERSION.to_string().as_str()] {
        return Err(corrupt(&format!("unsupported version {version:?}")));
    }
    let regime = match field("regime")?.as_slice() {
        ["generic"] => None,
        [r] => Some(Regime::parse(r).ok_or_else(|| corrupt("unknown regime"))?),
        _ => return Err(corrupt("regime takes one value")),
    };
    let c = scalar("C", field("C")?)?;
    let gamma = scalar("gamma", field("gamma")?)?;
    let bias = scalar("bias", field("bias")?)?;
    let n_sv: usize = match field("n_sv")?.as_slice() {
        [n] => n.parse().map_err(|_| corrupt("bad n_sv"))?,
        _ => return Err(corrupt("n_sv takes one value")),
    };
    let min = numbers("scaler.min", field("scaler.min")?)?;
    let max = numbers("scaler.max", field("scaler.max")?)?;
    let dim = min.len();
    if max.len() != dim || dim == 0 {
        return Err(corrupt("scaler.min and scaler.max lengths differ or are empty"));
    }
    let mut flat = Vec::with_capacity(n_sv * dim);
    for k in 0..n_sv {
        let row = numbers("sv", field("sv")?)?;
        if row.len() != dim {
            return Err(corrupt(&format!("support vector {k} has {} values, expected {dim}", row.len())));
        }
        flat.extend(row);
    }
    let dual_coef = numbers("dual_coef", field("dual_coef")?)?;
    if dual_coef.len() != n_sv {
        return Err(corrupt(&format!("{} dual coefficients for {n_sv} support vectors", dual_coef.len())));
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(corrupt("trailing content"));
    }
    if let Some(r) = regime {
        if r.dim() != dim {
            return Err(corrupt(&format!("{} regime with {dim} features", r.name())));
        }
    }
    if !(c > T::zero() && gamma > T::zero()) {
        return Err(corrupt("C and gamma must be positive"));
    }
    let support_vectors = Array2::from_shape_vec((n_sv, dim), flat).map_err(|e| corrupt(&e.to_string()))?;
    Ok(SvmModel { regime, c, gamma, bias, support_vectors, dual_coef, scaler: MinMaxScaler { min, max } })
}

pub fn save_model<T: Real>(m: &SvmModel<T>, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, model_to_string(m))
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<SvmModel<T>, SvmError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| SvmError::CorruptModel(format!("{}: {e}", path.display())))?;
    model_from_str(&text)
}
