use thiserror::Error;

/// Errors raised by estimation, testing and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: column `{0}` not found")]
    MissingColumn(String),

    #[error("parse error at data row {row}, column `{column}`: `{value}` is not numeric")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank deficiency: {0} is not of full column rank")]
    RankDeficient(String),

    #[error("objective not convex: kappa {kappa} is at or above the threshold {threshold}")]
    NotConvex { kappa: f64, threshold: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("quadrature did not converge: achieved error estimate {achieved:e}")]
    Quadrature { achieved: f64 },

    #[error("optimizer failed at every start (best value {best})")]
    Optimizer { best: f64 },
}

impl Error {
    /// True for errors caused by user input or configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Dimension(_)
                | Error::Unsupported(_)
                | Error::Domain(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
