use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::update_mu;
use super::{
    Diagnostics, Loss, Setup, Solution, SolverConfig, SolverState, StepOutcome, StepSize, TraceRow,
};
use crate::error::{Error, Result};
use crate::linalg::{self, shrink};
use crate::tensor::{DataMatrix, EntryMask};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// `X = UVᵀ` with `U: mn × r`, `V: ct × r`.
#[derive(Debug, Clone)]
pub struct FactoredState {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl FactoredState {
    pub fn product(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }

    /// `½(‖U‖² + ‖V‖²)`, an upper bound on `‖UVᵀ‖_*` that is tight at a
    /// balanced split.
    pub fn split_norm(&self) -> f64 {
        0.5 * (self.u.norm_squared() + self.v.norm_squared())
    }

    /// Exact `‖UVᵀ‖_*` from the `r × r` Gram matrices: with `G = UᵀU`,
    /// the squared singular values are the eigenvalues of `G^½ (VᵀV) G^½`.
    pub fn nuclear_norm(&self) -> f64 {
        let g = linalg::tr_mul(&self.u, &self.u).symmetric_eigen();
        let mut half = g.eigenvectors.clone();
        for (j, mut col) in half.column_iter_mut().enumerate() {
            col *= g.eigenvalues[j].max(0.0).sqrt();
        }
        let root = &half * g.eigenvectors.transpose();
        let inner = &root * linalg::tr_mul(&self.v, &self.v) * &root;
        let sym = (&inner + inner.transpose()) * 0.5;
        sym.symmetric_eigenvalues()
            .iter()
            .map(|l| l.max(0.0).sqrt())
            .sum()
    }

    /// Balanced split `U = Ū√Σ`, `V = V̄√Σ` of the leading `rank` singular
    /// triplets.
    pub fn from_svd(svd: &linalg::Svd, rank: usize) -> Self {
        let rank = rank.min(svd.rank());
        let mut u = svd.u.columns(0, rank).into_owned();
        let mut v = svd.v.columns(0, rank).into_owned();
        for j in 0..rank {
            let s = svd.singular_values[j].max(0.0).sqrt();
            u.column_mut(j).scale_mut(s);
            v.column_mut(j).scale_mut(s);
        }
        Self { u, v }
    }
}

/// Alternating-minimization ALM: gradient steps on U and V plus the exact E
/// update in an inner loop, multiplier and penalty updates outside.
///
/// `X = UVᵀ` is the only `mn × ct` product formed per sweep. Everything
/// else that touches full-size data (E, the residual, the Lagrangian terms
/// and the next `W = Z + μ(Y − E)`) is produced by one fused entrywise pass.
pub struct Alt<'a> {
    setup: Setup<'a>,
    factors: FactoredState,
    state: SolverState,
    w: DMatrix<f64>,
    sums: Sums,
    converged: bool,
    last: StepOutcome,
}

/// Entrywise totals from the last fused pass.
#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    /// Data loss of E on Ω.
    loss_e: f64,
    /// Data loss of Y − X on Ω.
    loss_fit: f64,
    /// `⟨Z, R⟩`.
    z_dot_r: f64,
    /// `‖R‖²`.
    r_sq: f64,
}

impl<'a> Alt<'a> {
    pub fn new(y: &'a DataMatrix, mask: &'a EntryMask, cfg: &'a SolverConfig) -> Result<Self> {
        let setup = Setup::new(y, mask, cfg)?;
        let factors = initial_factors(&y.values, mask, cfg.rank, cfg.seed)?;
        let (rows, cols) = y.values.shape();
        let state = SolverState {
            x: factors.product(),
            e: DMatrix::zeros(rows, cols),
            z: setup.z0.clone(),
            mu: setup.mu0,
            iter: 0,
            trace: Vec::new(),
        };
        let mut alt = Self {
            setup,
            factors,
            state,
            w: DMatrix::zeros(rows, cols),
            sums: Sums::default(),
            converged: false,
            last: StepOutcome {
                primal_residual: f64::INFINITY,
                relative_change: f64::INFINITY,
                converged: false,
            },
        };
        alt.refresh_e();
        Ok(alt)
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn factors(&self) -> &FactoredState {
        &self.factors
    }

    pub fn mu_max(&self) -> f64 {
        self.setup.mu_max
    }

    /// Exact E update for the current X, fused with the residual sums and
    /// the next W.
    fn refresh_e(&mut self) {
        let mu = self.state.mu;
        let inv = 1.0 / mu;
        let loss = self.setup.cfg.loss;
        let mut sums = Sums::default();
        let s = &mut self.state;
        let entries = self
            .setup
            .y
            .values
            .as_slice()
            .iter()
            .zip(s.x.as_slice())
            .zip(s.z.as_slice())
            .zip(self.setup.mask.as_slice())
            .zip(s.e.as_mut_slice().iter_mut().zip(self.w.as_mut_slice()));
        for ((((&y, &x), &z), &obs), (e, w)) in entries {
            let fit = y - x;
            let t = fit + z * inv;
            let ev = if obs {
                match loss {
                    Loss::Absolute => {
                        sums.loss_e += shrink(t, inv).abs();
                        sums.loss_fit += fit.abs();
                        shrink(t, inv)
                    }
                    Loss::Squared => {
                        let ev = mu * t / (1.0 + mu);
                        sums.loss_e += 0.5 * ev * ev;
                        sums.loss_fit += 0.5 * fit * fit;
                        ev
                    }
                }
            } else {
                t
            };
            let r = fit - ev;
            sums.z_dot_r += z * r;
            sums.r_sq += r * r;
            *e = ev;
            *w = z + mu * (y - ev);
        }
        self.sums = sums;
    }

    /// `(UᵀU, VᵀLV)`, from which `‖diff(UVᵀ)‖² = ⟨UᵀU, VᵀLV⟩`.
    fn smoothness(&self) -> f64 {
        let u = &self.factors.u;
        let v = &self.factors.v;
        let utu = linalg::tr_mul(u, u);
        let vtlv = linalg::tr_mul(v, &self.setup.op.laplacian_left(v));
        utu.dot(&vtlv)
    }

    /// Factored augmented Lagrangian at the current iterate.
    pub(super) fn lagrangian(&self) -> f64 {
        let cfg = self.setup.cfg;
        let f = &self.factors;
        self.sums.loss_e
            + 0.5 * cfg.lambda1 * (f.u.norm_squared() + f.v.norm_squared())
            + 0.5 * cfg.lambda2 * self.smoothness()
            + self.sums.z_dot_r
            + 0.5 * self.state.mu * self.sums.r_sq
    }

    /// One U step, one V step, one E update.
    pub(super) fn sweep(&mut self) -> Result<()> {
        let cfg = self.setup.cfg;
        let op = self.setup.op;
        let (l1, l2, mu) = (cfg.lambda1, cfg.lambda2, self.state.mu);
        let r = self.factors.u.ncols();
        let eye = DMatrix::<f64>::identity(r, r);
        let w = &self.w;

        // U step: minimize ½⟨U, U·A⟩ − ⟨W·V, U⟩ with A = λ1I + λ2VᵀLV + μVᵀV.
        {
            let v = &self.factors.v;
            let vtv = linalg::tr_mul(v, v);
            let a = &eye * l1 + linalg::tr_mul(v, &op.laplacian_left(v)) * l2 + &vtv * mu;
            let b = w * v;
            let u = &mut self.factors.u;
            let g = &*u * &a - b;
            let (d, eta0) = match cfg.step {
                StepSize::Scaled => (precondition(&g, &a), 1.0),
                _ => (g.clone(), plain_start(l1, mu, &vtv)),
            };
            let slope = g.dot(&d);
            let curvature = d.dot(&(&d * &a));
            let eta = step_length(cfg.step, eta0, slope, curvature);
            *u -= &d * eta;
        }

        // V step: minimize ½⟨V, V·B⟩ + (λ2/2)⟨LV, V·UᵀU⟩ − ⟨WᵀU, V⟩ with
        // B = λ1I + μUᵀU.
        {
            let u = &self.factors.u;
            let utu = linalg::tr_mul(u, u);
            let bmat = &eye * l1 + &utu * mu;
            let c = linalg::tr_mul(w, u);
            let v = &mut self.factors.v;
            let lv = op.laplacian_left(v);
            let g = &*v * &bmat + &lv * &utu * l2 - c;
            let (d, eta0) = match cfg.step {
                StepSize::Scaled => (precondition(&g, &bmat), 1.0),
                _ => (g.clone(), plain_start(l1, mu, &utu)),
            };
            let ld = op.laplacian_left(&d);
            let slope = g.dot(&d);
            let curvature = d.dot(&(&d * &bmat)) + l2 * ld.dot(&(&d * &utu));
            let eta = step_length(cfg.step, eta0, slope, curvature);
            *v -= &d * eta;
        }

        let vt = self.factors.v.transpose();
        self.state.x.gemm(1.0, &self.factors.u, &vt, 0.0);
        self.refresh_e();
        Ok(())
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let cfg = self.setup.cfg;
        let iteration = self.state.iter + 1;
        let x_old = self.state.x.clone();

        let mut prev = self.lagrangian();
        for _ in 0..cfg.max_inner {
            self.sweep()?;
            let cur = self.lagrangian();
            if !cur.is_finite() {
                return Err(Error::Divergence { iteration });
            }
            let done = (prev - cur).abs() <= cfg.inner_tol * cur.abs().max(f64::MIN_POSITIVE);
            prev = cur;
            if done {
                break;
            }
        }

        let primal = self.sums.r_sq.sqrt() / self.setup.y_norm;
        let change = self.setup.relative_change(&self.state.x, &x_old);
        if !primal.is_finite() || !change.is_finite() {
            return Err(Error::Divergence { iteration });
        }
        let objective = self.sums.loss_fit
            + cfg.lambda1 * self.factors.nuclear_norm()
            + 0.5 * cfg.lambda2 * self.smoothness();

        // Z ← Z + μR, then μ ← min(ρμ, μ_max); refresh W for the new pair.
        let mu_old = self.state.mu;
        let mu = update_mu(mu_old, cfg.rho, self.setup.mu_max)?;
        let s = &mut self.state;
        let mut z_dot_r = 0.0;
        let entries = self
            .setup
            .y
            .values
            .as_slice()
            .iter()
            .zip(s.x.as_slice())
            .zip(s.e.as_slice())
            .zip(s.z.as_mut_slice().iter_mut().zip(self.w.as_mut_slice()));
        for (((&y, &x), &e), (z, w)) in entries {
            let r = y - x - e;
            *z += mu_old * r;
            z_dot_r += *z * r;
            *w = *z + mu * (y - e);
        }
        self.sums.z_dot_r = z_dot_r;
        s.mu = mu;
        s.iter = iteration;
        if iteration.is_multiple_of(10) {
            self.setup
                .check_finite(iteration, &[&self.factors.u, &self.factors.v, &s.e, &s.z])?;
        }

        s.trace.push(TraceRow {
            iteration,
            objective,
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
                rank: self.factors.u.ncols(),
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

/// `g·P⁻¹` for the symmetric positive definite `r × r` metric `P`; falls
/// back to `g` when `P` is numerically singular.
fn precondition(g: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    match p.clone().cholesky() {
        Some(ch) => ch.solve(&g.transpose()).transpose(),
        None => g.clone(),
    }
}

/// `1 / (λ1 + μ‖F‖₂²)` from the Gram matrix `FᵀF` of the other factor.
fn plain_start(lambda1: f64, mu: f64, gram: &DMatrix<f64>) -> f64 {
    1.0 / (lambda1 + mu * largest_eigenvalue(gram)).max(f64::MIN_POSITIVE)
}

/// Halve from `eta0` until the Armijo condition holds on the exact
/// quadratic model `q(−ηd) = q − η⟨g, d⟩ + ½η²κ`.
fn step_length(step: StepSize, eta0: f64, slope: f64, curvature: f64) -> f64 {
    match step {
        StepSize::Fixed(eta) => eta,
        StepSize::Auto | StepSize::Scaled => {
            if !(slope > 0.0) {
                return 0.0;
            }
            let mut eta = eta0;
            for _ in 0..MAX_HALVINGS {
                let decrease = eta * slope - 0.5 * eta * eta * curvature;
                if decrease >= ARMIJO * eta * slope {
                    break;
                }
                eta *= 0.5;
            }
            eta
        }
    }
}

fn largest_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Rank-`r` SVD of `P_Ω(Y)`, split evenly between the factors. Directions
/// with no energy get a small seeded perturbation so they can still move.
pub(super) fn initial_factors(
    y: &DMatrix<f64>,
    mask: &EntryMask,
    rank: usize,
    seed: u64,
) -> Result<FactoredState> {
    let projected = mask.project(y);
    let svd = linalg::economy_svd(&projected)?;
    let mut factors = FactoredState::from_svd(&svd, rank);
    let top = svd.singular_values.get(0).copied().unwrap_or(0.0);
    let base = if top > 0.0 { top } else { y.amax().max(1.0) };
    let scale = 1e-3 * (base / rank as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..rank {
        let sigma = svd.singular_values.get(j).copied().unwrap_or(0.0);
        if sigma > 1e-12 * base {
            continue;
        }
        for v in factors.u.column_mut(j).iter_mut() {
            *v = scale * (rng.random::<f64>() - 0.5);
        }
        for v in factors.v.column_mut(j).iter_mut() {
            *v = scale * (rng.random::<f64>() - 0.5);
        }
    }
    if factors.u.ncols() != rank {
        return Err(Error::InvalidParameter(format!(
            "rank {rank} exceeds matrix size"
        )));
    }
    Ok(factors)
}
