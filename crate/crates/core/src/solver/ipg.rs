use super::ops::{hessian_bound, ipg_update_x, primal_residual, update_dual, update_e, update_mu};
use super::{Diagnostics, Setup, Solution, SolverConfig, SolverState, StepOutcome, TraceRow};
use crate::error::{Error, Result};
use crate::tensor::{DataMatrix, EntryMask};

/// Margin over the Hessian bound for the majorization constant.
const STEP_MARGIN: f64 = 1.01;

/// Inexact proximal-gradient ALM: one SVT step on X, one exact E update,
/// then the multiplier and penalty updates.
pub struct Ipg<'a> {
    setup: Setup<'a>,
    state: SolverState,
    rank: usize,
    converged: bool,
    last: StepOutcome,
}

impl<'a> Ipg<'a> {
    pub fn new(y: &'a DataMatrix, mask: &'a EntryMask, cfg: &'a SolverConfig) -> Result<Self> {
        let setup = Setup::new(y, mask, cfg)?;
        let (rows, cols) = y.values.shape();
        let x = nalgebra::DMatrix::zeros(rows, cols);
        // Start E at its exact minimizer for X = 0 so the first X step is
        // not pulled toward unobserved entries.
        let e = update_e(&x, &y.values, &setup.z0, setup.mu0, mask, cfg.loss)?;
        let state = SolverState {
            x,
            e,
            z: setup.z0.clone(),
            mu: setup.mu0,
            iter: 0,
            trace: Vec::new(),
        };
        Ok(Self {
            setup,
            state,
            rank: 0,
            converged: false,
            last: StepOutcome {
                primal_residual: f64::INFINITY,
                relative_change: f64::INFINITY,
                converged: false,
            },
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn mu_max(&self) -> f64 {
        self.setup.mu_max
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let cfg = self.setup.cfg;
        let y = &self.setup.y.values;
        let s = &mut self.state;
        let iteration = s.iter + 1;

        let c_step = STEP_MARGIN * hessian_bound(cfg.lambda2, s.mu);
        let shrunk = ipg_update_x(
            &s.x,
            &s.e,
            &s.z,
            s.mu,
            y,
            self.setup.op,
            c_step,
            cfg.lambda1,
            cfg.lambda2,
        )
        .map_err(|err| match err {
            Error::NonFinite(_) => Error::Divergence { iteration },
            other => other,
        })?;
        let e = update_e(&shrunk.matrix, y, &s.z, s.mu, self.setup.mask, cfg.loss)?;

        let primal = primal_residual(y, &shrunk.matrix, &e);
        let change = self.setup.relative_change(&shrunk.matrix, &s.x);
        if !primal.is_finite() || !change.is_finite() {
            return Err(Error::Divergence { iteration });
        }
        s.z = update_dual(&s.z, s.mu, y, &shrunk.matrix, &e);
        s.x = shrunk.matrix;
        s.e = e;
        s.mu = update_mu(s.mu, cfg.rho, self.setup.mu_max)?;
        s.iter = iteration;
        if iteration.is_multiple_of(10) {
            self.setup.check_finite(iteration, &[&s.x, &s.e, &s.z])?;
        }

        let top = shrunk.shrunk.first().copied().unwrap_or(0.0);
        self.rank = shrunk.shrunk.iter().filter(|&&v| v > 1e-8 * top).count();
        s.trace.push(TraceRow {
            iteration,
            objective: self.setup.objective(&s.x, shrunk.shrunk.iter().sum()),
            primal_residual: primal,
            relative_change: change,
            mu: s.mu,
            seconds: self.setup.started.elapsed().as_secs_f64(),
        });

        self.converged = self.setup.converged(primal, change);
        self.last = StepOutcome {
            primal_residual: primal,
            relative_change: change,
            converged: self.converged,
        };
        Ok(self.last)
    }

    pub fn run(mut self) -> Result<Solution> {
        if let Some(sol) = self.setup.trivial() {
            return Ok(sol);
        }
        while self.state.iter < self.setup.cfg.max_outer {
            if self.step()?.converged {
                break;
            }
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> Solution {
        let dims = self.setup.y.dims;
        let objective = self.state.trace.last().map_or(f64::NAN, |r| r.objective);
        Solution {
            diagnostics: Diagnostics {
                objective,
                primal_residual: self.last.primal_residual,
                relative_change: self.last.relative_change,
                outer_iterations: self.state.iter,
                seconds: self.setup.started.elapsed().as_secs_f64(),
                rank: self.rank,
                converged: self.converged,
                trace: self.state.trace,
            },
            x: DataMatrix {
                values: self.state.x,
                dims,
            },
        }
    }
}
