//! Comparison methods: temporal interpolation plus the matrix-completion
//! family expressed as solver presets.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::solver::{self, Diagnostics, Loss, Solution, SolverConfig};
use crate::tensor::{DataMatrix, EntryMask};

/// Per-(pixel, channel) linear interpolation in time. Observed entries are
/// copied, interior gaps are interpolated, edge gaps take the nearest
/// observation, and series with no observations take the global mean.
pub fn interpolate_temporal(y: &DataMatrix, mask: &EntryMask) -> Result<DataMatrix> {
    mask.check_shape(&y.values)?;
    let observed = mask.count();
    if observed == 0 {
        return Err(Error::NoObservations);
    }
    let mean = y
        .values
        .iter()
        .zip(mask.as_slice())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v)
        .sum::<f64>()
        / observed as f64;

    let (rows, _) = y.values.shape();
    let (c, t) = (y.dims.c, y.dims.t);
    let mut out = y.values.clone();
    let mut known = Vec::with_capacity(t);
    for r in 0..rows {
        for k in 0..c {
            let col = |l: usize| l + k * t;
            known.clear();
            known.extend((0..t).filter(|&l| mask.get(r, col(l))));
            if known.is_empty() {
                for l in 0..t {
                    out[(r, col(l))] = mean;
                }
                continue;
            }
            let first = known[0];
            let last = known[known.len() - 1];
            for l in 0..first {
                out[(r, col(l))] = y.values[(r, col(first))];
            }
            for l in last + 1..t {
                out[(r, col(l))] = y.values[(r, col(last))];
            }
            for pair in known.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                let (ya, yb) = (y.values[(r, col(a))], y.values[(r, col(b))]);
                let span = (b - a) as f64;
                for l in a + 1..b {
                    let w = (l - a) as f64 / span;
                    out[(r, col(l))] = (1.0 - w) * ya + w * yb;
                }
            }
        }
    }
    Ok(y.with_values(out))
}

/// Plain matrix completion: squared loss, no temporal term.
pub fn solve_mc(
    y: &DataMatrix,
    mask: &EntryMask,
    lambda1: f64,
    base: &SolverConfig,
) -> Result<Solution> {
    solver::solve(y, mask, &preset(base, Loss::Squared, lambda1, 0.0))
}

/// Robust matrix completion: absolute loss, no temporal term.
pub fn solve_rmc(
    y: &DataMatrix,
    mask: &EntryMask,
    lambda1: f64,
    base: &SolverConfig,
) -> Result<Solution> {
    solver::solve(y, mask, &preset(base, Loss::Absolute, lambda1, 0.0))
}

/// Matrix completion with the temporal continuity term.
pub fn solve_tecmac(
    y: &DataMatrix,
    mask: &EntryMask,
    lambda1: f64,
    lambda2: f64,
    base: &SolverConfig,
) -> Result<Solution> {
    solver::solve(y, mask, &preset(base, Loss::Squared, lambda1, lambda2))
}

/// The full robust, temporally regularized model.
pub fn solve_tecromac(
    y: &DataMatrix,
    mask: &EntryMask,
    lambda1: f64,
    lambda2: f64,
    base: &SolverConfig,
) -> Result<Solution> {
    solver::solve(y, mask, &preset(base, Loss::Absolute, lambda1, lambda2))
}

fn preset(base: &SolverConfig, loss: Loss, lambda1: f64, lambda2: f64) -> SolverConfig {
    SolverConfig {
        loss,
        lambda1,
        lambda2,
        ..base.clone()
    }
}

/// Reconstruction methods compared in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Tecromac,
    Tecmac,
    Mc,
    Rmc,
    Interp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Tecromac,
        Method::Tecmac,
        Method::Mc,
        Method::Rmc,
        Method::Interp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tecromac => "tecromac",
            Method::Tecmac => "tecmac",
            Method::Mc => "mc",
            Method::Rmc => "rmc",
            Method::Interp => "interp",
        }
    }

    /// Runs the method. `cfg` supplies λ1, λ2 and the solver settings; the
    /// loss and any zeroed weight come from the method itself.
    pub fn reconstruct(
        self,
        y: &DataMatrix,
        mask: &EntryMask,
        cfg: &SolverConfig,
    ) -> Result<Reconstruction> {
        let (l1, l2) = (cfg.lambda1, cfg.lambda2);
        let solution = match self {
            Method::Interp => {
                return Ok(Reconstruction {
                    x: interpolate_temporal(y, mask)?,
                    diagnostics: None,
                })
            }
            Method::Tecromac => solve_tecromac(y, mask, l1, l2, cfg)?,
            Method::Tecmac => solve_tecmac(y, mask, l1, l2, cfg)?,
            Method::Mc => solve_mc(y, mask, l1, cfg)?,
            Method::Rmc => solve_rmc(y, mask, l1, cfg)?,
        };
        Ok(Reconstruction {
            x: solution.x,
            diagnostics: Some(solution.diagnostics),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// Output of any method; interpolation has no solver diagnostics.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub x: DataMatrix,
    pub diagnostics: Option<Diagnostics>,
}
