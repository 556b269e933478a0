use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {0:e})")]
    Asymmetric(f64),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("null residual y - x*beta0 is numerically zero; the self-normalized statistic is undefined")]
    DegenerateResidual,

    #[error("estimated tr(Sigma^2) is {0:e}: instrument rows have no cross-products, feasible statistic undefined")]
    DegenerateInstruments(f64),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{} simulation cell(s) failed: {}", failed.len(), failed.join("; "))]
    CellFailure { failed: Vec<String> },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors that make a single replication's statistic undefined.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateResidual | Error::DegenerateInstruments(_) | Error::Numeric(_)
        )
    }

    /// Process exit status for the command-line front end.
    ///
    /// 2 missing input, 3 validation, 4 degenerate statistic, 5 cell failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Validation(_)
            | Error::Asymmetric(_)
            | Error::NotPsd(_)
            | Error::Parse { .. }
            | Error::Config { .. } => 3,
            Error::DegenerateResidual | Error::DegenerateInstruments(_) | Error::Numeric(_) => 4,
            Error::CellFailure { .. } => 5,
        }
    }

    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Asymmetric(_) => "asymmetric-matrix",
            Error::NotPsd(_) => "not-psd",
            Error::DegenerateResidual => "degenerate-residual",
            Error::DegenerateInstruments(_) => "degenerate-instruments",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "missing-input",
            Error::Parse { .. } => "parse",
            Error::Config { .. } => "config",
            Error::CellFailure { .. } => "cell-failure",
        }
    }
}
