//! Augmented-Lagrangian solvers for temporally contiguous (robust) matrix
//! completion.
//!
//! Both solvers work on the split `Y = X + E` and minimize
//!
//! ```text
//! loss(P_Ω(E)) + λ1‖X‖_* + (λ2/2)‖diff(X)‖²
//! ```
//!
//! with multipliers `Z` and a geometrically growing penalty `μ`.
//! [`Algorithm::Ipg`] takes one proximal-gradient (SVT) step on `X` per
//! outer iteration; [`Algorithm::Alt`] works on a fixed-rank factorization
//! `X = UVᵀ` and never computes an SVD inside the loop.
//!
//! The squared loss turns the same engine into plain matrix completion
//! (`λ2 = 0`) or its temporally regularized variant.

mod alt;
mod ipg;
pub mod ops;

pub use alt::{Alt, FactoredState};
pub use ipg::Ipg;

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{DataMatrix, EntryMask};

pub use ops::{
    augmented_lagrangian, check_convergence, grad_f, grad_u, grad_v, ipg_update_x, primal_residual,
    tecromac_objective, update_dual, update_e, update_mu,
};

/// Default nuclear-norm weight.
pub const DEFAULT_LAMBDA1: f64 = 20.0;
/// Default temporal-smoothness weight.
pub const DEFAULT_LAMBDA2: f64 = 0.5;
/// Default factor rank for the alternating solver.
pub const DEFAULT_RANK: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    /// `‖P_Ω(·)‖₁`, robust to sparse gross errors.
    Absolute,
    /// `½‖P_Ω(·)‖_F²`.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ipg,
    Alt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// Plain gradient with backtracking from `1 / (λ1 + μ‖other factor‖₂²)`.
    Auto,
    /// Gradient scaled by the inverse `r × r` curvature of the factor's own
    /// quadratic, with backtracking from a unit step.
    Scaled,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub loss: Loss,
    pub algorithm: Algorithm,
    /// Initial penalty; `None` uses `1.25 / σ_max(Y)`.
    pub mu0: Option<f64>,
    pub rho: f64,
    /// Penalty cap as a multiple of the initial penalty.
    pub mu_max_factor: f64,
    /// Stop once `‖Y − X − E‖_F / ‖Y‖_F` drops to this level ...
    pub primal_tol: f64,
    /// ... and the step `‖ΔX‖_F / ‖Y‖_F` drops to this one.
    pub change_tol: f64,
    pub max_outer: usize,
    pub inner_tol: f64,
    pub max_inner: usize,
    pub rank: usize,
    pub step: StepSize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            loss: Loss::Absolute,
            algorithm: Algorithm::Ipg,
            mu0: None,
            rho: 1.1,
            mu_max_factor: 1e7,
            primal_tol: 1e-7,
            change_tol: 1e-6,
            max_outer: 500,
            inner_tol: 1e-4,
            max_inner: 20,
            rank: DEFAULT_RANK,
            step: StepSize::Auto,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return bad(format!(
                "lambda1 must be finite and >= 0, got {}",
                self.lambda1
            ));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return bad(format!(
                "lambda2 must be finite and >= 0, got {}",
                self.lambda2
            ));
        }
        if let Some(mu0) = self.mu0 {
            if !(mu0 > 0.0 && mu0.is_finite()) {
                return bad(format!("mu0 must be positive, got {mu0}"));
            }
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return bad(format!("rho must exceed 1, got {}", self.rho));
        }
        if !(self.mu_max_factor >= 1.0) {
            return bad(format!(
                "mu_max_factor must be >= 1, got {}",
                self.mu_max_factor
            ));
        }
        for (name, v) in [
            ("primal_tol", self.primal_tol),
            ("change_tol", self.change_tol),
            ("inner_tol", self.inner_tol),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration limits must be positive".into());
        }
        if self.algorithm == Algorithm::Alt {
            if self.rank == 0 || self.rank > rows.min(cols) {
                return bad(format!(
                    "rank {} must lie in [1, {}]",
                    self.rank,
                    rows.min(cols)
                ));
            }
            if let StepSize::Fixed(eta) = self.step {
                if !(eta > 0.0 && eta.is_finite()) {
                    return bad(format!("step size must be positive, got {eta}"));
                }
            }
        }
        Ok(())
    }
}

/// One row of the per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub relative_change: f64,
    pub mu: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub objective: f64,
    pub primal_residual: f64,
    pub relative_change: f64,
    pub outer_iterations: usize,
    pub seconds: f64,
    pub rank: usize,
    /// `false` when the loop stopped at `max_outer`.
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl Diagnostics {
    /// Tab-separated trace table with a header line.
    pub fn trace_table(&self) -> String {
        let mut out = String::from("iteration\tobjective\tresidual\tseconds\n");
        for row in &self.trace {
            let _ = writeln!(
                out,
                "{}\t{:.12e}\t{:.6e}\t{:.6}",
                row.iteration, row.objective, row.primal_residual, row.seconds
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: DataMatrix,
    pub diagnostics: Diagnostics,
}

/// Iterates of the augmented-Lagrangian loop.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub mu: f64,
    pub iter: usize,
    pub trace: Vec<TraceRow>,
}

/// Solves with the algorithm selected in `cfg`.
pub fn solve(y: &DataMatrix, mask: &EntryMask, cfg: &SolverConfig) -> Result<Solution> {
    match cfg.algorithm {
        Algorithm::Ipg => solve_ipg(y, mask, cfg),
        Algorithm::Alt => solve_alt(y, mask, cfg),
    }
}

pub fn solve_ipg(y: &DataMatrix, mask: &EntryMask, cfg: &SolverConfig) -> Result<Solution> {
    if cfg.algorithm != Algorithm::Ipg {
        return Err(Error::InvalidParameter(
            "solve_ipg called with a non-IPG config".into(),
        ));
    }
    Ipg::new(y, mask, cfg)?.run()
}

pub fn solve_alt(y: &DataMatrix, mask: &EntryMask, cfg: &SolverConfig) -> Result<Solution> {
    if cfg.algorithm != Algorithm::Alt {
        return Err(Error::InvalidParameter(
            "solve_alt called with a non-ALT config".into(),
        ));
    }
    Alt::new(y, mask, cfg)?.run()
}

/// What a single outer iteration reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub primal_residual: f64,
    pub relative_change: f64,
    pub converged: bool,
}

/// Validated inputs and the initial ALM state shared by both solvers.
struct Setup<'a> {
    y: &'a DataMatrix,
    mask: &'a EntryMask,
    cfg: &'a SolverConfig,
    op: crate::temporal::TemporalOperator,
    y_norm: f64,
    mu0: f64,
    mu_max: f64,
    z0: DMatrix<f64>,
    started: Instant,
}

impl<'a> Setup<'a> {
    fn new(y: &'a DataMatrix, mask: &'a EntryMask, cfg: &'a SolverConfig) -> Result<Self> {
        let started = Instant::now();
        let (rows, cols) = y.values.shape();
        if rows != y.dims.pixels() || cols != y.dims.columns() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix does not match dims {}",
                y.dims
            )));
        }
        mask.check_shape(&y.values)?;
        cfg.validate(rows, cols)?;
        if y.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation matrix".into()));
        }
        let y_norm = y.values.norm();
        let sigma = crate::linalg::spectral_norm(&y.values, 100);
        let mu0 = match cfg.mu0 {
            Some(mu) => mu,
            None if sigma > 0.0 => 1.25 / sigma,
            None => 1.0,
        };
        let inf_norm = y.values.amax();
        let scale = sigma.max(inf_norm);
        // The multiplier vanishes off Ω at any fixed point. Starting it
        // nonzero there would give X a one-off pull toward cloudy values.
        let z0 = if scale > 0.0 {
            mask.project(&y.values) / scale
        } else {
            DMatrix::zeros(rows, cols)
        };
        Ok(Self {
            y,
            mask,
            cfg,
            op: crate::temporal::TemporalOperator::new(y.dims.c, y.dims.t),
            y_norm,
            mu0,
            mu_max: mu0 * cfg.mu_max_factor,
            z0,
            started,
        })
    }

    fn trivial(&self) -> Option<Solution> {
        (self.y_norm == 0.0).then(|| Solution {
            x: DataMatrix::zeros(self.y.dims),
            diagnostics: Diagnostics {
                objective: 0.0,
                primal_residual: 0.0,
                relative_change: 0.0,
                outer_iterations: 0,
                seconds: self.started.elapsed().as_secs_f64(),
                rank: 0,
                converged: true,
                trace: Vec::new(),
            },
        })
    }

    fn objective(&self, x: &DMatrix<f64>, nuclear: f64) -> f64 {
        let c = self.cfg;
        ops::data_loss(&(&self.y.values - x), self.mask, c.loss)
            + c.lambda1 * nuclear
            + 0.5 * c.lambda2 * self.op.diff_norm_sq(x)
    }

    fn relative_change(&self, x_new: &DMatrix<f64>, x_old: &DMatrix<f64>) -> f64 {
        (x_new - x_old).norm() / self.y_norm
    }

    fn converged(&self, primal: f64, change: f64) -> bool {
        primal <= self.cfg.primal_tol && change <= self.cfg.change_tol
    }

    fn check_finite(&self, iteration: usize, mats: &[&DMatrix<f64>]) -> Result<()> {
        if mats.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { iteration });
        }
        Ok(())
    }
}
