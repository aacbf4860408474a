use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cloudfill::config::RunConfig;
use cloudfill::io::{self, FrameDirSpec, RawElement};
use cloudfill::pipeline::{self, PipelineInput};
use cloudfill::{Error, ImageSequence, Settings};

const THREADS_ENV: &str = "CLOUDFILL_THREADS";

#[derive(Parser)]
#[command(
    name = "cloudfill",
    version,
    about = "Cloud detection and removal for image sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect clouds and write the observation mask (white = clear).
    Detect {
        /// Frame directory or raw tensor file.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for mask frames.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Fill in cloudy entries given a mask.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
        /// Mask frame directory (white = clear).
        #[arg(long)]
        mask: PathBuf,
        /// Output frame directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write the result as a raw f64 tensor.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Write the per-iteration trace table here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        opts: Options,
    },
    /// Composite synthetic clouds over a clean sequence.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        /// Output directory; receives `frames/`, `mask/` and `cloudy.tcrm`.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Relative reconstruction error of one sequence against another.
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// detect, reconstruct and (with --reference) evaluate in one go.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        /// Output directory; receives `mask/`, `frames/`,
        /// `reconstruction.tcrm` and `report.txt`.
        #[arg(long)]
        out: PathBuf,
        /// Clean sequence to score the reconstruction against.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Ground-truth mask directory to score detection against.
        #[arg(long)]
        truth_mask: Option<PathBuf>,
        #[command(flatten)]
        opts: Options,
    },
}

/// Flags shared by the subcommands. Each one overrides the same key in
/// `--config`.
#[derive(Args, Default)]
struct Options {
    /// Flat TOML file with any of the keys below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dark-channel threshold [default: 0.6].
    #[arg(long)]
    gamma: Option<f64>,
    /// Entries kept per always-white pixel [default: ceil(t/10)].
    #[arg(long)]
    k: Option<usize>,
    /// tecromac, tecmac, mc, rmc or interp [default: tecromac].
    #[arg(long)]
    method: Option<String>,
    /// ipg or alt [default: ipg].
    #[arg(long)]
    algorithm: Option<String>,
    /// Nuclear-norm weight [default: 20].
    #[arg(long)]
    lambda1: Option<f64>,
    /// Temporal-smoothness weight [default: 0.5].
    #[arg(long)]
    lambda2: Option<f64>,
    /// Factor rank for alt [default: 20].
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// auto, scaled or a fixed positive step (alt only).
    #[arg(long)]
    step: Option<String>,
    /// Target cloud coverage for simulate.
    #[arg(long)]
    coverage: Option<f64>,
    /// Comma-separated frame indices to cover completely in simulate.
    #[arg(long, value_delimiter = ',')]
    full_cover_frames: Option<Vec<usize>>,
    /// Fraction of clear entries to overwrite with 1.0 in simulate.
    #[arg(long)]
    corruption: Option<f64>,
    /// 8 or 16.
    #[arg(long)]
    bit_depth: Option<u32>,
}

impl Options {
    fn settings(&self) -> Result<Settings, Error> {
        let file = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            gamma: self.gamma,
            k: self.k,
            method: self.method.clone(),
            algorithm: self.algorithm.clone(),
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            rank: self.rank,
            seed: self.seed,
            max_outer: self.max_outer,
            step: self.step.clone(),
            coverage: self.coverage,
            full_cover_frames: self.full_cover_frames.clone(),
            corruption: self.corruption,
            bit_depth: self.bit_depth,
            ..RunConfig::default()
        };
        file.overlay(flags).resolve()
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_) | Error::Config(_) => 2,
        Error::Io(_) | Error::Image { .. } | Error::EmptyDirectory(_) | Error::Format(_) => 3,
        Error::Divergence { .. } | Error::NoConvergence(_) => 4,
        _ => 1,
    }
}

fn frames_spec(path: &Path, seq: &ImageSequence, settings: &Settings) -> FrameDirSpec {
    FrameDirSpec::new(path)
        .with_channels(seq.dims().c)
        .with_depth(settings.depth)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Detect { input, out, opts } => {
            let settings = opts.settings()?;
            let seq = io::load_sequence(&input)?;
            let det = cloudfill::detect_clouds(&seq, &settings.detector)?;
            io::save_mask(&det.mask, &FrameDirSpec::new(&out))?;
            let d = seq.dims();
            println!(
                "observed {} of {} pixel-frames; {} always-white pixel(s), {} entries rescued",
                det.mask.count(),
                d.pixels() * d.t,
                det.always_white.len(),
                det.rescued
            );
        }
        Command::Reconstruct {
            input,
            mask,
            out,
            raw,
            trace,
            opts,
        } => {
            let settings = opts.settings()?;
            let seq = io::load_sequence(&input)?;
            let mask = io::load_mask(&mask, Some(seq.dims()))?;
            let (rec, diag) =
                pipeline::reconstruct(&seq, &mask, settings.method, &settings.solver)?;
            io::save_frames(&rec, &frames_spec(&out, &rec, &settings))?;
            if let Some(path) = raw {
                io::save_raw(path, &rec, RawElement::F64)?;
            }
            if let Some(d) = diag {
                if let Some(path) = trace {
                    fs::write(path, d.trace_table())?;
                }
                println!(
                    "{}: {} iterations, converged {}, objective {:.6e}, {:.2}s",
                    settings.method, d.outer_iterations, d.converged, d.objective, d.seconds
                );
                if !d.converged {
                    eprintln!("warning: stopped at the iteration limit before converging");
                }
            }
        }
        Command::Simulate { input, out, opts } => {
            let settings = opts.settings()?;
            let clean = io::load_sequence(&input)?;
            let (cloudy, truth) = pipeline::simulate(&clean, &settings)?;
            io::save_frames(
                &cloudy,
                &frames_spec(&out.join("frames"), &cloudy, &settings),
            )?;
            io::save_mask(&truth, &FrameDirSpec::new(out.join("mask")))?;
            io::save_raw(out.join("cloudy.tcrm"), &cloudy, RawElement::F64)?;
            let d = clean.dims();
            println!(
                "cloudy entries {:.4} of {}",
                1.0 - truth.count() as f64 / (d.pixels() * d.t) as f64,
                d
            );
        }
        Command::Evaluate {
            estimate,
            reference,
            out,
        } => {
            let est = io::load_sequence(&estimate)?;
            let reference = io::load_sequence(&reference)?;
            let report = pipeline::evaluate(&est, &reference)?.report();
            print!("{report}");
            if let Some(path) = out {
                fs::write(path, report)?;
            }
        }
        Command::Pipeline {
            input,
            out,
            reference,
            truth_mask,
            opts,
        } => {
            let settings = opts.settings()?;
            let cloudy = io::load_sequence(&input)?;
            let reference = reference.map(io::load_sequence).transpose()?;
            let truth = truth_mask
                .map(|p| io::load_mask(p, Some(cloudy.dims())))
                .transpose()?;
            let input = PipelineInput {
                cloudy: &cloudy,
                reference: reference.as_ref(),
                truth_mask: truth.as_ref(),
            };
            let output = pipeline::run_pipeline(&input, &settings)?;
            pipeline::write_pipeline(&out, &output, &settings)?;
            print!("{}", output.report);
        }
    }
    Ok(())
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidParameter(format!("{THREADS_ENV}='{value}' is not a positive integer"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
