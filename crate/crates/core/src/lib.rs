//! Cloud detection over geostationary landmark chips.
//!
//! The chain runs per landmark: raw counts are calibrated to reflectance and
//! brightness temperature ([`radiometry`]), every chip is tagged with the
//! solar zenith angle at its centre ([`solar`]), the L2 mask yields a static
//! land/water map and coastline band ([`masks`]), chips are split into four
//! illumination ranges around a landmark-specific median angle
//! ([`partition`]), and one RBF SVM ([`svm`]) is trained per range on
//! balanced pixel samples ([`sampling`]) of the per-pixel descriptors
//! ([`features`]). [`ensemble`] ties the four models together and
//! [`metrics`] scores them. [`synth`] produces archives with known truth and
//! [`cli`] exposes everything as the `landmarks` command.
//!
//! Numerical kernels are generic over `f32`/`f64` through [`num::Real`];
//! the pipeline itself runs in `f64`.

pub mod archive;
pub mod cli;
pub mod ensemble;
pub mod features;
pub mod masks;
pub mod metrics;
pub mod num;
pub mod partition;
pub mod radiometry;
pub mod rng;
pub mod sampling;
pub mod solar;
pub mod svm;
pub mod synth;

pub use num::Real;

pub type SvmModel64 = svm::SvmModel<f64>;
pub type SvmModel32 = svm::SvmModel<f32>;
pub type MinMaxScaler64 = features::MinMaxScaler<f64>;
pub type MinMaxScaler32 = features::MinMaxScaler<f32>;
pub type CalibrationConfig64 = radiometry::CalibrationConfig<f64>;
pub type CalibrationConfig32 = radiometry::CalibrationConfig<f32>;
pub type SunPosition64 = solar::SunPosition<f64>;
pub type SzaThresholds64 = partition::SzaThresholds<f64>;
pub type GridPoint64 = svm::GridPoint<f64>;

/// Coarse failure class, mapped to the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Internal => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Internal => "internal",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{msg}")]
    Data { code: &'static str, msg: String },
    #[error(transparent)]
    Archive(#[from] archive::ArchiveError),
    #[error(transparent)]
    Radiometry(#[from] radiometry::RadiometryError),
    #[error(transparent)]
    Solar(#[from] solar::SolarError),
    #[error(transparent)]
    Masks(#[from] masks::MaskError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Partition(#[from] partition::PartitionError),
    #[error(transparent)]
    Sampling(#[from] sampling::SamplingError),
    #[error(transparent)]
    Svm(#[from] svm::SvmError),
    #[error(transparent)]
    Ensemble(#[from] ensemble::EnsembleError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("writing {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Usage(_) => ErrorKind::Usage,
            Error::Output { .. } | Error::Metrics(metrics::MetricsError::Output { .. }) => ErrorKind::Internal,
            Error::Synth(synth::SynthError::Io { .. }) => ErrorKind::Internal,
            Error::Synth(synth::SynthError::InvalidSpec(_)) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }

    /// Name of the innermost error variant, e.g. `WrongLandmark`.
    pub fn code(&self) -> String {
        match self {
            Error::Usage(_) => "Usage".into(),
            Error::Data { code, .. } => (*code).into(),
            Error::Output { .. } => "IoFailure".into(),
            other => match innermost_variant(&format!("{other:?}")).as_str() {
                "Io" => "IoFailure".into(),
                name => name.into(),
            },
        }
    }

    pub fn data(code: &'static str, msg: impl Into<String>) -> Self {
        Error::Data { code, msg: msg.into() }
    }

    pub fn output(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Output { path: path.as_ref().display().to_string(), source }
    }
}

/// Walks `Outer(Inner(Leaf { .. }))`-shaped debug text down to `Leaf`.
fn innermost_variant(debug: &str) -> String {
    let mut rest = debug;
    let mut name = "";
    loop {
        let end = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
        if end == 0 || !rest.starts_with(|c: char| c.is_ascii_uppercase()) {
            break;
        }
        name = &rest[..end];
        match rest[end..].strip_prefix('(') {
            Some(inner) => rest = inner,
            None => break,
        }
    }
    name.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_name_the_innermost_variant() {
        let e = Error::Ensemble(ensemble::EnsembleError::WrongLandmark { expected: 1, found: 2 });
        assert_eq!(e.code(), "WrongLandmark");
        assert_eq!(e.kind().exit_code(), 3);
        let e = Error::Sampling(sampling::SamplingError::Features(features::FeatureError::UncalibratedChip));
        assert_eq!(e.code(), "UncalibratedChip");
        let e = Error::Svm(svm::SvmError::TooFewSamples("x".into()));
        assert_eq!(e.code(), "TooFewSamples");
        assert_eq!(Error::Usage("bad".into()).kind().exit_code(), 2);
        let e = Error::output("/x", std::io::Error::other("disk full"));
        assert_eq!((e.kind(), e.code().as_str()), (ErrorKind::Internal, "IoFailure"));
    }
}
