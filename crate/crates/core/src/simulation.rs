//! Synthetic clouds over clean sequences, the RRE metric, and the
//! simulate → detect → reconstruct → score harness.

use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::Method;
use crate::detect::{self, DetectorConfig};
use crate::error::{Error, Result};
use crate::solver::{Algorithm, SolverConfig};
use crate::tensor::{DataMatrix, Dims, FrameField, ImageSequence, ObservationMask};

/// Peak gain of a single bump before clipping. A large gain keeps the band
/// of partially transparent cloud edge thin.
const BUMP_GAIN: f64 = 8.0;
/// Fraction of the support radius where one bump crosses α = 0.5.
const HALF_RADIUS: f64 = 0.866_025_403_784_438_6;
const MAX_ATTEMPTS: usize = 20;
const PROPOSALS_PER_ATTEMPT: usize = 400;
/// Per-frame acceptance band around the target coverage.
const FRAME_SLACK: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct CloudSimParams {
    /// Target fraction of entries with α > 0.5 on frames that are not fully
    /// covered.
    pub coverage: f64,
    pub n_blobs_per_frame: RangeInclusive<usize>,
    /// Typical blob radius as a fraction of `min(m, n)`.
    pub blob_scale: f64,
    pub cloud_intensity: RangeInclusive<f64>,
    pub full_cover_frames: Vec<usize>,
    pub seed: u64,
}

impl Default for CloudSimParams {
    fn default() -> Self {
        Self {
            coverage: 0.4,
            n_blobs_per_frame: 0..=64,
            blob_scale: 0.15,
            cloud_intensity: 0.8..=1.0,
            full_cover_frames: Vec::new(),
            seed: 0,
        }
    }
}

impl CloudSimParams {
    pub fn validate(&self, frames: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(0.0..=1.0).contains(&self.coverage) {
            return bad(format!(
                "coverage must lie in [0, 1], got {}",
                self.coverage
            ));
        }
        if self.n_blobs_per_frame.is_empty() {
            return bad("empty blob-count range".into());
        }
        if !(self.blob_scale > 0.0 && self.blob_scale.is_finite()) {
            return bad(format!(
                "blob_scale must be positive, got {}",
                self.blob_scale
            ));
        }
        let (lo, hi) = (*self.cloud_intensity.start(), *self.cloud_intensity.end());
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return bad(format!(
                "cloud intensity range [{lo}, {hi}] must lie in [0, 1]"
            ));
        }
        if let Some(&l) = self.full_cover_frames.iter().find(|&&l| l >= frames) {
            return bad(format!("full-cover frame {l} outside [0, {frames})"));
        }
        Ok(())
    }
}

/// `α = min(1, Σ gain·(1 − (d/R)²)²)` over bumps with `d < R`.
fn add_bump(frame: &mut [f64], m: usize, n: usize, ci: f64, cj: f64, radius: f64) {
    let r2 = radius * radius;
    let i0 = (ci - radius).floor().max(0.0) as usize;
    let i1 = ((ci + radius).ceil() as usize).min(m.saturating_sub(1));
    let j0 = (cj - radius).floor().max(0.0) as usize;
    let j1 = ((cj + radius).ceil() as usize).min(n.saturating_sub(1));
    for j in j0..=j1 {
        for i in i0..=i1 {
            let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
            if d2 < r2 {
                let q = 1.0 - d2 / r2;
                frame[i + m * j] += BUMP_GAIN * q * q;
            }
        }
    }
}

fn coverage_of(raw: &[f64]) -> f64 {
    raw.iter().filter(|&&a| a > 0.5).count() as f64 / raw.len() as f64
}

/// One frame of bumps, grown greedily toward `target`. A bump that
/// overshoots by more than the gap it closed is rolled back. Fails with the
/// coverage reached.
fn grow_frame(
    m: usize,
    n: usize,
    params: &CloudSimParams,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<Vec<f64>, f64> {
    let target = params.coverage;
    let (min_blobs, max_blobs) = (
        *params.n_blobs_per_frame.start(),
        *params.n_blobs_per_frame.end(),
    );
    let scale = params.blob_scale * m.min(n) as f64;
    let mut raw = vec![0.0; m * n];
    let mut blobs = 0;
    let mut cov = 0.0;
    for _ in 0..PROPOSALS_PER_ATTEMPT {
        if (cov - target).abs() <= FRAME_SLACK && blobs >= min_blobs {
            break;
        }
        if blobs >= max_blobs {
            break;
        }
        let radius = scale * rng.random_range(0.5..1.5) / HALF_RADIUS;
        let ci = rng.random_range(0.0..m as f64);
        let cj = rng.random_range(0.0..n as f64);
        let saved = raw.clone();
        add_bump(&mut raw, m, n, ci, cj, radius);
        let next = coverage_of(&raw);
        if next > target && next - target > target - cov {
            raw = saved;
            continue;
        }
        cov = next;
        blobs += 1;
    }
    let ok = (cov - target).abs() <= FRAME_SLACK && params.n_blobs_per_frame.contains(&blobs);
    if ok {
        Ok(raw.into_iter().map(|a| a.min(1.0)).collect())
    } else {
        Err(cov)
    }
}

/// Seeded opacity field in `[0, 1]` over `(i, j, l)`.
pub fn generate_cloud_alpha(dims: Dims, params: &CloudSimParams) -> Result<FrameField> {
    params.validate(dims.t)?;
    let (m, n) = (dims.m, dims.n);
    let p = dims.pixels();
    let mut field = FrameField::zeros(m, n, dims.t);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for l in 0..dims.t {
        let out = &mut field.values[p * l..p * (l + 1)];
        if params.full_cover_frames.contains(&l) {
            out.fill(1.0);
            continue;
        }
        if params.coverage == 0.0 {
            continue;
        }
        let mut achieved: f64 = 0.0;
        let frame = (0..MAX_ATTEMPTS).find_map(|_| match grow_frame(m, n, params, &mut rng) {
            Ok(frame) => Some(frame),
            Err(cov) => {
                achieved = achieved.max(cov);
                None
            }
        });
        match frame {
            Some(frame) => out.copy_from_slice(&frame),
            None => {
                return Err(Error::InfeasibleCoverage {
                    target: params.coverage,
                    achieved,
                    attempts: MAX_ATTEMPTS,
                })
            }
        }
    }
    Ok(field)
}

/// Mean fraction of entries with `α > 0.5` over frames not listed in
/// `skip`.
pub fn realized_coverage(alpha: &FrameField, skip: &[usize]) -> f64 {
    let frames: Vec<usize> = (0..alpha.t).filter(|l| !skip.contains(l)).collect();
    if frames.is_empty() {
        return 0.0;
    }
    frames
        .iter()
        .map(|&l| coverage_of(alpha.frame(l)))
        .sum::<f64>()
        / frames.len() as f64
}

/// `(1 − α)·clean + α·w` with one whiteness `w` per `(i, j, l)` drawn from
/// `intensity`, shared by all channels. Truth: observed iff `α ≤ 0.5`.
pub fn composite_clouds(
    clean: &ImageSequence,
    alpha: &FrameField,
    intensity: RangeInclusive<f64>,
    seed: u64,
) -> Result<(ImageSequence, ObservationMask)> {
    let d = clean.dims();
    if (alpha.m, alpha.n, alpha.t) != (d.m, d.n, d.t) {
        return Err(Error::Shape(format!(
            "alpha field {}x{}x{} does not match sequence {d}",
            alpha.m, alpha.n, alpha.t
        )));
    }
    let (lo, hi) = (*intensity.start(), *intensity.end());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let whiteness: Vec<f64> = (0..alpha.values.len())
        .map(|_| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        })
        .collect();
    let mut cloudy = clean.clone();
    for l in 0..d.t {
        for k in 0..d.c {
            for j in 0..d.n {
                for i in 0..d.m {
                    let a = alpha.get(i, j, l);
                    if a == 0.0 {
                        continue;
                    }
                    let w = whiteness[i + d.m * (j + d.n * l)];
                    let c = clean.get(i, j, k, l);
                    cloudy.set(i, j, k, l, (1.0 - a) * c + a * w);
                }
            }
        }
    }
    let truth = ObservationMask::from_vec(
        d.m,
        d.n,
        d.t,
        alpha.values.iter().map(|&a| a <= 0.5).collect(),
    )?;
    Ok((cloudy, truth))
}

/// Relative reconstruction error `‖x − truth‖² / ‖truth‖²`.
pub fn rre(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Shape(format!(
            "RRE of {} entries against {}",
            estimate.len(),
            truth.len()
        )));
    }
    let denom: f64 = truth.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

/// Entries of frame `l` across all channels, in `(i, j, k)` order.
pub fn frame_entries(x: &DataMatrix, l: usize) -> Vec<f64> {
    let d = x.dims;
    (0..d.c)
        .flat_map(|k| {
            x.values
                .column(d.column(k, l))
                .iter()
                .copied()
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Smooth, nonnegative rank-`rank` sequence with values in `(0, 0.5]`.
/// Spatial factors are low-frequency patterns in `[0.2, 1]`; temporal
/// factors are sinusoids with periods of 20 to 30 frames.
pub fn synthetic_background(dims: Dims, rank: usize, seed: u64) -> Result<ImageSequence> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let spatial: Vec<(f64, f64, f64, f64)> = (0..rank)
        .map(|_| {
            (
                rng.random_range(0.5..2.0),
                rng.random_range(0.5..2.0),
                rng.random_range(0.0..tau),
                rng.random_range(0.0..tau),
            )
        })
        .collect();
    let temporal: Vec<(f64, f64)> = (0..rank)
        .map(|_| (rng.random_range(20.0..30.0), rng.random_range(0.0..tau)))
        .collect();
    let channel: Vec<Vec<f64>> = (0..rank)
        .map(|_| (0..dims.c).map(|_| rng.random_range(0.6..1.0)).collect())
        .collect();
    let a = |q: usize, i: usize, j: usize| {
        let (fx, fy, px, py) = spatial[q];
        let x = i as f64 / dims.m as f64;
        let y = j as f64 / dims.n as f64;
        0.6 + 0.4 * (tau * fx * x + px).sin() * (tau * fy * y + py).cos()
    };
    let b = |q: usize, k: usize, l: usize| {
        let (period, phase) = temporal[q];
        channel[q][k] * (1.0 + 0.5 * (tau * l as f64 / period + phase).sin())
    };
    let raw = ImageSequence::from_fn(dims, |i, j, k, l| {
        (0..rank).map(|q| a(q, i, j) * b(q, k, l)).sum()
    });
    let peak = raw.as_slice().iter().copied().fold(0.0, f64::max);
    let data = raw.into_vec().into_iter().map(|v| 0.5 * v / peak).collect();
    ImageSequence::from_vec(dims, data)
}

/// Per-method score.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    pub rre: f64,
    /// RRE restricted to each fully covered frame, in frame order.
    pub full_cover_rre: Vec<f64>,
    /// `‖X_l‖_F` of each fully covered frame.
    pub full_cover_norm: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub dims: Dims,
    pub sim: CloudSimParams,
    pub gamma: f64,
    pub k_neighbors: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub realized_coverage: f64,
    pub precision: f64,
    pub recall: f64,
    pub methods: Vec<MethodResult>,
}

impl ExperimentReport {
    pub fn method(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == method)
    }

    /// Tab-separated per-method table. Wall times are left out unless asked
    /// for, so that reports from identical runs compare byte for byte.
    pub fn table(&self, timings: bool) -> String {
        let mut out = String::from("method\trre\titerations\tconverged");
        if timings {
            out.push_str("\tseconds");
        }
        out.push('\n');
        for r in &self.methods {
            let _ = write!(
                out,
                "{}\t{:.6e}\t{}\t{}",
                r.method, r.rre, r.iterations, r.converged
            );
            if timings {
                let _ = write!(out, "\t{:.3}", r.seconds);
            }
            out.push('\n');
        }
        out
    }

    /// `key = value` lines covering the configuration and every score.
    pub fn key_values(&self, timings: bool) -> String {
        let mut out = String::new();
        let s = &self.sim;
        let frames: Vec<String> = s.full_cover_frames.iter().map(|l| l.to_string()).collect();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("dims", self.dims.to_string());
        kv("seed", self.seed.to_string());
        kv("coverage", s.coverage.to_string());
        kv(
            "n_blobs_per_frame",
            format!(
                "{}..{}",
                s.n_blobs_per_frame.start(),
                s.n_blobs_per_frame.end()
            ),
        );
        kv("blob_scale", s.blob_scale.to_string());
        kv(
            "cloud_intensity",
            format!("{}..{}", s.cloud_intensity.start(), s.cloud_intensity.end()),
        );
        kv("full_cover_frames", format!("[{}]", frames.join(",")));
        kv("sim_seed", s.seed.to_string());
        kv("gamma", self.gamma.to_string());
        kv("k", self.k_neighbors.to_string());
        kv("lambda1", format!("{:e}", self.lambda1));
        kv("lambda2", format!("{:e}", self.lambda2));
        kv(
            "algorithm",
            match self.algorithm {
                Algorithm::Ipg => "ipg",
                Algorithm::Alt => "alt",
            }
            .into(),
        );
        kv(
            "realized_coverage",
            format!("{:.6}", self.realized_coverage),
        );
        kv("detection_precision", format!("{:.6}", self.precision));
        kv("detection_recall", format!("{:.6}", self.recall));
        for r in &self.methods {
            let name = r.method.name();
            kv(&format!("{name}.rre"), format!("{:.9e}", r.rre));
            let fc: Vec<String> = r
                .full_cover_rre
                .iter()
                .map(|v| format!("{v:.6e}"))
                .collect();
            kv(
                &format!("{name}.full_cover_rre"),
                format!("[{}]", fc.join(",")),
            );
            kv(&format!("{name}.iterations"), r.iterations.to_string());
            kv(&format!("{name}.converged"), r.converged.to_string());
            if timings {
                kv(&format!("{name}.seconds"), format!("{:.3}", r.seconds));
            }
        }
        out
    }
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub cloudy: ImageSequence,
    pub truth_mask: ObservationMask,
    pub detected_mask: ObservationMask,
    pub reconstructions: Vec<(Method, DataMatrix)>,
}

pub struct ExperimentSpec<'a> {
    pub clean: &'a ImageSequence,
    pub sim: CloudSimParams,
    pub detector: DetectorConfig,
    pub solver: SolverConfig,
    pub methods: Vec<Method>,
    /// Fraction of detected-clear entries overwritten with 1.0 before
    /// reconstruction.
    pub gross_corruption: f64,
}

/// Simulates clouds over `clean`, detects them, reconstructs with every
/// method and scores against `clean`.
pub fn run_experiment(spec: &ExperimentSpec<'_>) -> Result<Experiment> {
    let clean = spec.clean;
    clean.validate()?;
    let dims = clean.dims();
    if !(0.0..=1.0).contains(&spec.gross_corruption) {
        return Err(Error::InvalidParameter(format!(
            "corruption fraction must lie in [0, 1], got {}",
            spec.gross_corruption
        )));
    }
    let alpha = generate_cloud_alpha(dims, &spec.sim)?;
    let (mut cloudy, truth) = composite_clouds(
        clean,
        &alpha,
        spec.sim.cloud_intensity.clone(),
        spec.sim.seed.wrapping_add(1),
    )?;
    let detection = detect::detect_clouds(&cloudy, &spec.detector)?;
    let (precision, recall) = detect::precision_recall(&detection.mask, &truth);
    if spec.gross_corruption > 0.0 {
        corrupt_observed(
            &mut cloudy,
            &detection.mask,
            spec.gross_corruption,
            spec.sim.seed.wrapping_add(2),
        );
    }

    let y = cloudy.to_matrix();
    let entries = detection.mask.to_entries(dims.c);
    let truth_matrix = clean.to_matrix();
    let mut methods = Vec::new();
    let mut reconstructions = Vec::new();
    for (idx, &method) in spec.methods.iter().enumerate() {
        let cfg = SolverConfig {
            seed: spec.solver.seed.wrapping_add(idx as u64),
            ..spec.solver.clone()
        };
        let started = Instant::now();
        let rec = method.reconstruct(&y, &entries, &cfg)?;
        let seconds = started.elapsed().as_secs_f64();
        let mut full_cover_rre = Vec::new();
        let mut full_cover_norm = Vec::new();
        for &l in &spec.sim.full_cover_frames {
            let est = frame_entries(&rec.x, l);
            full_cover_rre.push(rre(&est, &frame_entries(&truth_matrix, l))?);
            full_cover_norm.push(est.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        let (iterations, converged) = rec
            .diagnostics
            .as_ref()
            .map_or((0, true), |d| (d.outer_iterations, d.converged));
        methods.push(MethodResult {
            method,
            rre: rre(rec.x.values.as_slice(), truth_matrix.values.as_slice())?,
            full_cover_rre,
            full_cover_norm,
            iterations,
            converged,
            seconds,
        });
        reconstructions.push((method, rec.x));
    }

    let report = ExperimentReport {
        dims,
        sim: spec.sim.clone(),
        gamma: spec.detector.gamma,
        k_neighbors: spec.detector.resolve_k(dims.t)?,
        lambda1: spec.solver.lambda1,
        lambda2: spec.solver.lambda2,
        algorithm: spec.solver.algorithm,
        seed: spec.solver.seed,
        realized_coverage: realized_coverage(&alpha, &spec.sim.full_cover_frames),
        precision,
        recall,
        methods,
    };
    Ok(Experiment {
        report,
        cloudy,
        truth_mask: truth,
        detected_mask: detection.mask,
        reconstructions,
    })
}

/// Sets a seeded `fraction` of the entries inside `mask` (all channels of
/// a chosen pixel-frame) to 1.0.
pub fn corrupt_observed(seq: &mut ImageSequence, mask: &ObservationMask, fraction: f64, seed: u64) {
    let d = seq.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..d.t {
        for j in 0..d.n {
            for i in 0..d.m {
                for k in 0..d.c {
                    let hit = rng.random::<f64>() < fraction;
                    if hit && mask.is_observed(i, j, l) {
                        seq.set(i, j, k, l, 1.0);
                    }
                }
            }
        }
    }
}
