//! Crate-wide error type.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Matrix could not be factorised even at the largest jitter level.
    NotFactorizable { dim: usize, last_jitter: f64 },
    /// Cholesky input violated the symmetry tolerance.
    AsymmetricInput { row: usize, col: usize, delta: f64 },
    DimensionMismatch { expected: usize, got: usize, context: &'static str },
    /// A conditional variance fell below the tolerated negative slack.
    NegativeVariance { value: f64 },
    /// A term of the bound or a gradient coordinate became non-finite.
    NonFinite { what: String },
    /// Emission noise too small for a predictive density to be meaningful.
    DegenerateR { index: usize, value: f64 },
    /// A data column has zero variance and cannot be normalised.
    DegenerateColumn { name: String },
    Parse { line: usize, message: String },
    SchemaMismatch { message: String },
    Config(String),
    /// Training aborted after repeated non-finite steps.
    NumericalAbort { iteration: usize, what: String },
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotFactorizable { dim, last_jitter } => write!(
                f,
                "matrix of dim {dim} not factorizable (last jitter tried {last_jitter:.1e})"
            ),
            Error::AsymmetricInput { row, col, delta } => write!(
                f,
                "asymmetric input: |a[{row},{col}] - a[{col},{row}]| = {delta:.3e} exceeds tolerance"
            ),
            Error::DimensionMismatch { expected, got, context } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {got}")
            }
            Error::NegativeVariance { value } => {
                write!(f, "conditional variance {value:.3e} below negative tolerance")
            }
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::DegenerateR { index, value } => {
                write!(f, "emission noise R[{index}] = {value:.3e} below 1e-12")
            }
            Error::DegenerateColumn { name } => {
                write!(f, "column '{name}' is constant and cannot be normalised")
            }
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::SchemaMismatch { message } => write!(f, "schema mismatch: {message}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::NumericalAbort { iteration, what } => {
                write!(f, "aborted at iteration {iteration} after repeated non-finite {what}")
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
