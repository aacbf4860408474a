//! Cloud detection and scene reconstruction for temporal image sequences.
//!
//! A cloudy sequence is unfolded into a pixels × (channels·frames) matrix,
//! cloudy entries are detected with a dark-channel threshold, and the
//! clear scene is recovered by a robust low-rank completion with a temporal
//! smoothness penalty. See [`solver`] for the model and the two solvers,
//! [`baselines`] for the comparison methods and [`pipeline`] for the
//! end-to-end flow.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod detect;
pub mod error;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod simulation;
pub mod solver;
pub mod temporal;
pub mod tensor;

pub use baselines::{Method, Reconstruction};
pub use config::{RunConfig, Settings};
pub use detect::{detect_clouds, DetectionReport, DetectorConfig};
pub use error::{Error, Result};
pub use io::{BitDepth, FrameDirSpec, RawElement};
pub use pipeline::{
    evaluate, reconstruct, run_pipeline, Evaluation, PipelineInput, PipelineOutput,
};
pub use simulation::{rre, CloudSimParams};
pub use solver::{
    solve, solve_alt, solve_ipg, Algorithm, Diagnostics, Loss, Solution, SolverConfig, StepSize,
};
pub use temporal::TemporalOperator;
pub use tensor::{DataMatrix, Dims, EntryMask, FrameField, ImageSequence, ObservationMask};
