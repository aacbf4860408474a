//! Flat key-value run configuration. Keys mirror the command-line flags;
//! flags override the file.

use std::path::Path;

use serde::Deserialize;

use crate::baselines::Method;
use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::io::BitDepth;
use crate::simulation::CloudSimParams;
use crate::solver::{Algorithm, SolverConfig, StepSize};

/// Every field is optional so that a file, the flags and the defaults can
/// be layered.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub gamma: Option<f64>,
    pub k: Option<usize>,
    pub method: Option<String>,
    pub algorithm: Option<String>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub rank: Option<usize>,
    pub seed: Option<u64>,
    pub max_outer: Option<usize>,
    pub rho: Option<f64>,
    pub primal_tol: Option<f64>,
    pub change_tol: Option<f64>,
    pub step: Option<String>,
    pub coverage: Option<f64>,
    pub full_cover_frames: Option<Vec<usize>>,
    pub blob_scale: Option<f64>,
    pub intensity_min: Option<f64>,
    pub intensity_max: Option<f64>,
    pub corruption: Option<f64>,
    pub bit_depth: Option<u32>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        RunConfig { $($field: $top.$field.or($base.$field)),* }
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `top` wins wherever it is set.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        let base = self;
        overlay!(base, top;
            gamma, k, method, algorithm, lambda1, lambda2, rank, seed, max_outer, rho,
            primal_tol, change_tol, step, coverage, full_cover_frames, blob_scale,
            intensity_min, intensity_max, corruption, bit_depth,
        )
    }

    pub fn resolve(&self) -> Result<Settings> {
        let d = Settings::default();
        let mut solver = d.solver.clone();
        if let Some(a) = &self.algorithm {
            solver.algorithm = parse_algorithm(a)?;
        }
        if let Some(s) = &self.step {
            solver.step = parse_step(s)?;
        }
        solver.lambda1 = self.lambda1.unwrap_or(solver.lambda1);
        solver.lambda2 = self.lambda2.unwrap_or(solver.lambda2);
        solver.rank = self.rank.unwrap_or(solver.rank);
        solver.seed = self.seed.unwrap_or(solver.seed);
        solver.max_outer = self.max_outer.unwrap_or(solver.max_outer);
        solver.rho = self.rho.unwrap_or(solver.rho);
        solver.primal_tol = self.primal_tol.unwrap_or(solver.primal_tol);
        solver.change_tol = self.change_tol.unwrap_or(solver.change_tol);
        // Shape-dependent checks happen once the data is known.
        solver.validate(usize::MAX, usize::MAX)?;

        let detector = DetectorConfig {
            gamma: self.gamma.unwrap_or(d.detector.gamma),
            k_neighbors: self.k.or(d.detector.k_neighbors),
        };
        if !(0.0..=1.0).contains(&detector.gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 1], got {}",
                detector.gamma
            )));
        }

        let intensity = self.intensity_min.unwrap_or(*d.sim.cloud_intensity.start())
            ..=self.intensity_max.unwrap_or(*d.sim.cloud_intensity.end());
        let sim = CloudSimParams {
            coverage: self.coverage.unwrap_or(d.sim.coverage),
            full_cover_frames: self.full_cover_frames.clone().unwrap_or_default(),
            blob_scale: self.blob_scale.unwrap_or(d.sim.blob_scale),
            cloud_intensity: intensity,
            seed: solver.seed,
            ..d.sim
        };
        let corruption = self.corruption.unwrap_or(d.corruption);
        if !(0.0..=1.0).contains(&corruption) {
            return Err(Error::InvalidParameter(format!(
                "corruption must lie in [0, 1], got {corruption}"
            )));
        }

        Ok(Settings {
            detector,
            method: match &self.method {
                Some(m) => m.parse()?,
                None => d.method,
            },
            solver,
            sim,
            corruption,
            depth: match self.bit_depth {
                Some(bits) => BitDepth::from_bits(bits)?,
                None => d.depth,
            },
        })
    }
}

pub fn parse_algorithm(s: &str) -> Result<Algorithm> {
    match s.to_ascii_lowercase().as_str() {
        "ipg" => Ok(Algorithm::Ipg),
        "alt" => Ok(Algorithm::Alt),
        _ => Err(Error::InvalidParameter(format!("unknown algorithm '{s}'"))),
    }
}

/// `auto`, `scaled`, or a positive number for a fixed step.
pub fn parse_step(s: &str) -> Result<StepSize> {
    match s.to_ascii_lowercase().as_str() {
        "auto" => Ok(StepSize::Auto),
        "scaled" => Ok(StepSize::Scaled),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|eta| *eta > 0.0 && eta.is_finite())
            .map(StepSize::Fixed)
            .ok_or_else(|| Error::InvalidParameter(format!("bad step size '{s}'"))),
    }
}

/// Fully resolved settings for every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub detector: DetectorConfig,
    pub method: Method,
    pub solver: SolverConfig,
    /// Simulation parameters; the seed follows the solver seed.
    pub sim: CloudSimParams,
    pub corruption: f64,
    pub depth: BitDepth,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            method: Method::Tecromac,
            solver: SolverConfig::default(),
            sim: CloudSimParams::default(),
            corruption: 0.0,
            depth: BitDepth::Eight,
        }
    }
}
