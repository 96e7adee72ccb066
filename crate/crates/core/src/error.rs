use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("wrong length: expected {expected}, got {actual}")]
    WrongLength { expected: usize, actual: usize },

    #[error("image {height}x{width} is smaller than the {method} kernel support ({min}x{min})")]
    ImageTooSmall {
        method: &'static str,
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("mask has {available} vein pixels, {requested} hints requested")]
    InsufficientVeinPixels { available: usize, requested: usize },

    #[error("hint set is empty")]
    EmptyHintSet,

    #[error("conjugate gradient did not converge within {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("provenance mismatch: colorized with {expected}, got {actual}")]
    ProvenanceMismatch { expected: String, actual: String },

    #[error("zero-norm feature vector")]
    ZeroNorm,

    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("nonpositive probability {value} at index {index}")]
    NonPositiveProbability { index: usize, value: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("not enough samples for {what}: need {needed}, got {got}")]
    TooFewSamples { what: String, needed: usize, got: usize },

    #[error("zero pooled variance")]
    ZeroVariance,

    #[error("split violation: {0}")]
    SplitViolation(String),

    #[error("no live record for {identity_id}/{application_id}")]
    MissingRecord {
        identity_id: String,
        application_id: String,
    },

    #[error("no token for {identity_id}/{application_id}")]
    MissingToken {
        identity_id: String,
        application_id: String,
    },

    #[error("token {0} has been revoked")]
    Revoked(String),

    #[error("{identity_id}/{application_id} already has a live enrollment")]
    DuplicateEnrollment {
        identity_id: String,
        application_id: String,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
