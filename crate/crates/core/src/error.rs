use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}:{line}: region `{id}` is not present in the geometry file", file.display())]
    UnknownRegion {
        file: PathBuf,
        line: usize,
        id: String,
    },

    #[error("{}:{line}: population for region `{id}` must be strictly positive, got {value}", file.display())]
    NonPositivePopulation {
        file: PathBuf,
        line: usize,
        id: String,
        value: f64,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance matrix is not positive definite even with jitter {jitter:e} (leading minor {index})")]
    NotPositiveDefinite { index: usize, jitter: f64 },

    #[error("Poisson rate overflow in region {region} (log rate {log_rate})")]
    RateOverflow { region: usize, log_rate: f64 },

    #[error("fit set has {found} regions, at least {required} are needed; use a larger study region or raise the screening threshold")]
    FitSetTooSmall { found: usize, required: usize },

    #[error("no cases observed: {0}")]
    ZeroCases(String),

    #[error("MCMC diverged: {0}")]
    Divergence(String),

    #[error("IRLS did not converge after {iterations} iterations (relative deviance change {last_change:e})")]
    IrlsNonConvergence { iterations: usize, last_change: f64 },

    #[error("empirical null is not identifiable: {0}")]
    NonConcaveNull(String),

    #[error("Monte Carlo standard error {se:e} too large relative to correction {correction:e}; raise n_samples")]
    InsufficientSamples { se: f64, correction: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::UnknownRegion { .. }
            | Error::NonPositivePopulation { .. }
            | Error::Io { .. }
            | Error::InvalidInput(_)
            | Error::FitSetTooSmall { .. }
            | Error::ZeroCases(_)
            | Error::Config(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
