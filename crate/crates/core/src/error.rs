use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in input: {0}")]
    NonFinite(String),

    #[error("{0} failed to converge")]
    NoConvergence(&'static str),

    #[error("solver diverged at outer iteration {iteration}: non-finite iterates (step size too large?)")]
    Divergence { iteration: usize },

    #[error("no observed entries in the mask")]
    NoObservations,

    #[error("cannot realize requested cloud coverage {target:.3} (best mean {achieved:.3} after {attempts} attempts)")]
    InfeasibleCoverage {
        target: f64,
        achieved: f64,
        attempts: usize,
    },

    #[error("reference sequence is identically zero")]
    ZeroReference,

    #[error("bad raw tensor file: {0}")]
    Format(String),

    #[error("no frames found in {0}")]
    EmptyDirectory(PathBuf),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
