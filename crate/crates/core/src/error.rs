use std::io;

use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("malformed input {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("no bracket for the boundary constant in [{c_lo}, {c_hi}]: mass ranges over [{mass_lo}, {mass_hi}] but t = {t}")]
    Bracket {
        c_lo: f64,
        c_hi: f64,
        mass_lo: f64,
        mass_hi: f64,
        t: f64,
    },

    #[error("box too small: droplet comes within {distance} cells of the grid boundary (margin {margin})")]
    BoxTooSmall { distance: usize, margin: usize },

    #[error("no convergence after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("inconsistent result: {0}")]
    Inconsistent(String),

    #[error("insufficient resolution: {0}")]
    Resolution(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Precondition(_) => "precondition",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Bracket { .. } => "bracket",
            Error::BoxTooSmall { .. } => "box_too_small",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Degenerate(_) => "degenerate",
            Error::Inconsistent(_) => "inconsistent",
            Error::Resolution(_) => "resolution",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
