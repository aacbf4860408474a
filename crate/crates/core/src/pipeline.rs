//! detect → reconstruct → evaluate over whole sequences, and the on-disk
//! layout of a pipeline run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::baselines::Method;
use crate::config::Settings;
use crate::detect::{self, DetectionReport};
use crate::error::{Error, Result};
use crate::io::{self, FrameDirSpec, RawElement};
use crate::simulation::{self, frame_entries};
use crate::solver::{Algorithm, Diagnostics, SolverConfig};
use crate::tensor::{ImageSequence, ObservationMask};

/// Runs one reconstruction method on a sequence and its cloud mask.
pub fn reconstruct(
    seq: &ImageSequence,
    mask: &ObservationMask,
    method: Method,
    cfg: &SolverConfig,
) -> Result<(ImageSequence, Option<Diagnostics>)> {
    seq.validate()?;
    let d = seq.dims();
    if !mask.matches(d) {
        let (m, n, t) = mask.shape();
        return Err(Error::Shape(format!(
            "mask is {m}x{n}x{t}, sequence is {d}"
        )));
    }
    let rec = method.reconstruct(&seq.to_matrix(), &mask.to_entries(d.c), cfg)?;
    Ok((rec.x.to_sequence()?, rec.diagnostics))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rre: f64,
    /// Per-frame RRE; `None` where the reference frame is all zero.
    pub frame_rre: Vec<Option<f64>>,
}

impl Evaluation {
    pub fn report(&self) -> String {
        let mut out = format!("rre = {:.9e}\n", self.rre);
        let frames: Vec<String> = self
            .frame_rre
            .iter()
            .map(|v| v.map_or_else(|| "nan".to_owned(), |v| format!("{v:.6e}")))
            .collect();
        let _ = writeln!(out, "frame_rre = [{}]", frames.join(","));
        out
    }
}

/// RRE of `estimate` against `reference`, overall and per frame.
pub fn evaluate(estimate: &ImageSequence, reference: &ImageSequence) -> Result<Evaluation> {
    if estimate.dims() != reference.dims() {
        return Err(Error::Shape(format!(
            "estimate is {}, reference is {}",
            estimate.dims(),
            reference.dims()
        )));
    }
    let rre = simulation::rre(estimate.as_slice(), reference.as_slice())?;
    let (a, b) = (estimate.to_matrix(), reference.to_matrix());
    let frame_rre = (0..estimate.dims().t)
        .map(|l| simulation::rre(&frame_entries(&a, l), &frame_entries(&b, l)).ok())
        .collect();
    Ok(Evaluation { rre, frame_rre })
}

/// Composites seeded synthetic clouds over `clean`. Returns the cloudy
/// sequence and the ground-truth mask.
pub fn simulate(
    clean: &ImageSequence,
    settings: &Settings,
) -> Result<(ImageSequence, ObservationMask)> {
    clean.validate()?;
    let sim = &settings.sim;
    let alpha = simulation::generate_cloud_alpha(clean.dims(), sim)?;
    let (mut cloudy, truth) = simulation::composite_clouds(
        clean,
        &alpha,
        sim.cloud_intensity.clone(),
        sim.seed.wrapping_add(1),
    )?;
    if settings.corruption > 0.0 {
        simulation::corrupt_observed(
            &mut cloudy,
            &truth,
            settings.corruption,
            sim.seed.wrapping_add(2),
        );
    }
    Ok((cloudy, truth))
}

pub struct PipelineInput<'a> {
    pub cloudy: &'a ImageSequence,
    /// Clean sequence to score against.
    pub reference: Option<&'a ImageSequence>,
    /// Ground-truth mask to score detection against.
    pub truth_mask: Option<&'a ObservationMask>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub detection: DetectionReport,
    pub reconstruction: ImageSequence,
    pub diagnostics: Option<Diagnostics>,
    pub evaluation: Option<Evaluation>,
    /// `key = value` report. Carries no wall times, so identical runs give
    /// identical bytes.
    pub report: String,
}

pub fn run_pipeline(input: &PipelineInput<'_>, settings: &Settings) -> Result<PipelineOutput> {
    let cloudy = input.cloudy;
    let d = cloudy.dims();
    let detection = detect::detect_clouds(cloudy, &settings.detector)?;
    let (reconstruction, diagnostics) =
        reconstruct(cloudy, &detection.mask, settings.method, &settings.solver)?;
    let evaluation = input
        .reference
        .map(|r| evaluate(&reconstruction, r))
        .transpose()?;

    let mut report = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(report, "{k} = {v}");
    };
    let s = &settings.solver;
    kv("dims", d.to_string());
    kv("gamma", settings.detector.gamma.to_string());
    kv("k", settings.detector.resolve_k(d.t)?.to_string());
    kv("method", settings.method.to_string());
    kv(
        "algorithm",
        match s.algorithm {
            Algorithm::Ipg => "ipg",
            Algorithm::Alt => "alt",
        }
        .into(),
    );
    kv("lambda1", format!("{:e}", s.lambda1));
    kv("lambda2", format!("{:e}", s.lambda2));
    kv("rank", s.rank.to_string());
    kv("seed", s.seed.to_string());
    let observed = detection.mask.count();
    kv(
        "observed_fraction",
        format!("{:.6}", observed as f64 / (d.pixels() * d.t) as f64),
    );
    kv(
        "always_white_pixels",
        detection.always_white.len().to_string(),
    );
    kv("rescued_entries", detection.rescued.to_string());
    if let Some(truth) = input.truth_mask {
        if !truth.matches(d) {
            return Err(Error::Shape(
                "truth mask does not match the sequence".into(),
            ));
        }
        let (p, r) = detect::precision_recall(&detection.mask, truth);
        kv("detection_precision", format!("{p:.6}"));
        kv("detection_recall", format!("{r:.6}"));
    }
    if let Some(diag) = &diagnostics {
        kv("iterations", diag.outer_iterations.to_string());
        kv("converged", diag.converged.to_string());
        kv("objective", format!("{:.9e}", diag.objective));
        kv("primal_residual", format!("{:.3e}", diag.primal_residual));
    }
    if let Some(e) = &evaluation {
        report.push_str(&e.report());
    }

    Ok(PipelineOutput {
        detection,
        reconstruction,
        diagnostics,
        evaluation,
        report,
    })
}

/// Writes `mask/`, `frames/`, `reconstruction.tcrm` and `report.txt` under
/// `out`. Returns every path written.
pub fn write_pipeline(
    out: &Path,
    output: &PipelineOutput,
    settings: &Settings,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let d = output.reconstruction.dims();
    let mut written = io::save_mask(&output.detection.mask, &FrameDirSpec::new(out.join("mask")))?;
    let frames = FrameDirSpec::new(out.join("frames"))
        .with_channels(d.c)
        .with_depth(settings.depth);
    written.extend(io::save_frames(&output.reconstruction, &frames)?);
    let raw = out.join("reconstruction.tcrm");
    io::save_raw(&raw, &output.reconstruction, RawElement::F64)?;
    written.push(raw);
    let report = out.join("report.txt");
    fs::write(&report, &output.report)?;
    written.push(report);
    Ok(written)
}
