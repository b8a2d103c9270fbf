//! `scpsfm` command line: synthesize scenes, solve, evaluate, sweep.
//!
//! Exit codes: 0 success, 1 invalid input (bad flags, configs or files),
//! 2 degenerate solve (outputs are still written).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use scpsfm::io::IoError;
use scpsfm::solver::{Parameterization, ProjLossVariant, SolverConfig};
use scpsfm::synth::SceneConfig;

pub mod commands;
pub mod spec;
pub mod svg;

pub use spec::{ExperimentSpec, Factor, Method, SweepSpec};

/// Default output root when neither `--out` nor `output_dir` is given.
pub const OUTPUT_ROOT_ENV: &str = "SCPSFM_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "scpsfm-out";

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_DEGENERATE: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("degenerate solve: {0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Degenerate(_) => EXIT_DEGENERATE,
            _ => EXIT_INVALID,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Invalid(msg.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "scpsfm", version, about = "Robust projective SfM with self-calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene bundle.
    Synth(SynthArgs),
    /// Run the solver on a scene bundle or a track file.
    Solve(SolveArgs),
    /// Score a solve result against ground truth (or tracks only).
    Eval(EvalArgs),
    /// Run the three method variants over a range of one scene factor.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct SceneArgs {
    /// Number of views.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of points.
    #[arg(long)]
    pub m: Option<usize>,
    /// Outlier rate in [0, 1).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Noise level as a fraction of the matrix RMS.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pad_rows: Option<usize>,
    #[arg(long)]
    pub pad_cols: Option<usize>,
}

impl SceneArgs {
    pub fn apply(&self, c: &mut SceneConfig) {
        if let Some(v) = self.n {
            c.n_views = v;
        }
        if let Some(v) = self.m {
            c.m_points = v;
        }
        if let Some(v) = self.delta {
            c.outlier_rate = v;
        }
        if let Some(v) = self.sigma {
            c.noise_sigma = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if self.pad_rows.is_some() {
            c.pad_rows = self.pad_rows;
        }
        if self.pad_cols.is_some() {
            c.pad_cols = self.pad_cols;
        }
    }
}

#[derive(Debug, Clone, Args, Default)]
pub struct SolverArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub inlier_threshold: Option<f64>,
    /// tail_sum | sigma4
    #[arg(long, value_parser = parse_snake::<ProjLossVariant>)]
    pub proj_loss_variant: Option<ProjLossVariant>,
    /// direct | encoder
    #[arg(long, value_parser = parse_snake::<Parameterization>)]
    pub parameterization: Option<Parameterization>,
    /// Seed for the encoder initialization.
    #[arg(long)]
    pub solver_seed: Option<u64>,
}

impl SolverArgs {
    pub fn apply(&self, c: &mut SolverConfig) {
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.t {
            c.t = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = self.inlier_threshold {
            c.inlier_threshold = v;
        }
        if let Some(v) = self.proj_loss_variant {
            c.proj_loss_variant = v;
        }
        if let Some(v) = self.parameterization {
            c.parameterization = v;
        }
        if let Some(v) = self.solver_seed {
            c.seed = v;
        }
    }
}

/// Parses a flag value with the same snake_case names the config files use.
pub fn parse_snake<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Experiment config (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Bundle directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Scene bundle directory or track CSV; defaults to the config's `tracks`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Image width and height of a track file, for the normalizing transform.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    pub image_size: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write an SVG plot of the loss trace.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `result.json` written by `solve`.
    #[arg(long)]
    pub result: PathBuf,
    /// Ground-truth bundle; defaults to the input recorded by `solve`.
    #[arg(long, conflicts_with = "tracks")]
    pub scene: Option<PathBuf>,
    /// Track file (no ground truth: only the 2D error is reported).
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// homography | similarity
    #[arg(long, value_parser = parse_snake::<scpsfm::eval::Alignment>)]
    pub alignment: Option<scpsfm::eval::Alignment>,
    /// true_inliers | predicted_inliers | all
    #[arg(long, value_parser = parse_snake::<scpsfm::eval::Error2dMask>)]
    pub mask_2d: Option<scpsfm::eval::Error2dMask>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// m | n | delta | sigma
    #[arg(long, value_parser = parse_snake::<Factor>)]
    pub factor: Option<Factor>,
    /// Comma-separated factor values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated subset of baseline, beta0, beta1.
    #[arg(long, value_delimiter = ',', value_parser = parse_snake::<Method>)]
    pub methods: Option<Vec<Method>>,
    /// Concurrent trials; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `--out`, then the config's `output_dir`, then `$SCPSFM_OUTPUT_ROOT/<name>`.
pub fn resolve_output_dir(flag: Option<&Path>, spec: Option<&ExperimentSpec>, name: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = spec.and_then(|s| s.output_dir.as_ref()) {
        return p.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
    root.join(name)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Solve(a) => commands::solve(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
    }
}
