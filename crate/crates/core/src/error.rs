use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimation and band-construction routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented domain. `field` names the offending input.
    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("density `{0}` has no Lebesgue density (degenerate law)")]
    NoDensity(&'static str),

    #[error("quadrature did not converge on [{lo}, {hi}]: estimated error {error:e} > tolerance {tol:e}")]
    Quadrature { lo: f64, hi: f64, error: f64, tol: f64 },

    #[error("design mismatch at row {row}: w = {found} but expected {expected}")]
    DesignMismatch { row: usize, found: f64, expected: f64 },

    #[error("kernel table span {span} does not cover argument {argument}")]
    SpanTooSmall { span: f64, argument: f64 },

    #[error("smoothing window around x = {x} contains no pseudo-residuals (bandwidth {bandwidth} too small)")]
    EmptyWindow { x: f64, bandwidth: f64 },

    #[error("{context}: {source}")]
    Io {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { field, reason: reason.into() }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let context = path.into();
    move |source| Error::Io { context, source }
}
