use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// Variants fall into three families that the CLI maps onto exit codes:
/// contract/configuration problems, numeric failures, and I/O or parse
/// failures. See [`Error::is_numeric`].
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on shapes or values was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid experiment or generator configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Instance outside the regime an algorithm supports.
    #[error("unsupported instance: {0}")]
    Unsupported(String),

    /// Non-finite value in a plain-domain Sinkhorn iteration.
    #[error("non-finite value in Sinkhorn scaling at iteration {iteration}; retry with log_domain = true")]
    NumericOverflow { iteration: usize },

    #[error("Sinkhorn did not converge in {iterations} iterations (row residual {row_residual:e}, column residual {col_residual:e})")]
    NotConverged {
        iterations: usize,
        row_residual: f64,
        col_residual: f64,
    },

    /// A barycentric map column with no transported mass.
    #[error("degenerate column mass at target index {0}")]
    DegenerateMass(usize),

    /// Metric that is undefined on the given input (e.g. AUC with one class).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Requested breakdown needs metadata the dataset does not carry.
    #[error("feature unavailable: {0}")]
    FeatureUnavailable(String),

    /// Projection of input with no variance.
    #[error("degenerate projection: input has zero variance")]
    DegenerateProjection,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericOverflow { .. }
                | Error::NotConverged { .. }
                | Error::DegenerateMass(_)
                | Error::DegenerateProjection
        )
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Unsupported(_) => "unsupported",
            Error::NumericOverflow { .. } => "numeric_overflow",
            Error::NotConverged { .. } => "not_converged",
            Error::DegenerateMass(_) => "degenerate_mass",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::FeatureUnavailable(_) => "feature_unavailable",
            Error::DegenerateProjection => "degenerate_projection",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
