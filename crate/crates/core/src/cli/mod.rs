//! The `factorvid` command-line tool.
//!
//! Every subcommand resolves its configuration as flags > `--config` JSON file >
//! defaults, and writes a run manifest next to the files it produces.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::error::Error;
use crate::guidance::Strategy;
use crate::juice::AgreementClass;
use crate::sampler::TimestepSelection;
use crate::schedule::PredictionKind;

pub use commands::{
    CurateConfig, DenoiserChoice, EvalConfig, GenerateConfig, InterpConfig, InterpMode, ScheduleConfig, TrainConfig,
};
pub use manifest::{sha256_hex, FileDigest, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration.
    Usage(String),
    /// Failure while processing inputs.
    Run(Error),
}

impl CliError {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "error: {e}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "factorvid", version, about = "Factorized text-to-video diffusion engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a noise schedule; print its SNR table or write it as JSON.
    Schedule(ScheduleArgs),
    /// Two-step generation (image, then video), or extension of an existing clip.
    Generate(GenerateArgs),
    /// Zero-interleave 8 frames into 37, or stitch two 37-frame halves into 65.
    InterpMask(InterpArgs),
    /// Vote-file analytics, or the simulated agreement curve.
    Eval(EvalArgs),
    /// Score motion and apply the high-quality filter to a JSONL manifest.
    Curate(CurateArgs),
    /// Train the temporal layers of the toy factorized network.
    Train(TrainArgs),
}

#[derive(Args, Debug, Default)]
pub struct ScheduleArgs {
    /// JSON file with any of the configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub zero_terminal: Option<bool>,
    /// Print every k-th timestep; the first and last are always printed.
    #[arg(long)]
    pub every: Option<usize>,
    /// Write the schedule to this JSON file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct SamplerFlags {
    /// Inference steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// eps, x0 or v.
    #[arg(long)]
    pub pred: Option<PredictionKind>,
    /// trailing or linspace.
    #[arg(long)]
    pub timesteps: Option<TimestepSelection>,
    #[arg(long)]
    pub w_image: Option<f64>,
    #[arg(long)]
    pub w_text: Option<f64>,
    /// image_first, text_first, additive, residual or text_only.
    #[arg(long)]
    pub strategy: Option<Strategy>,
}

#[derive(Args, Debug, Default)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    /// oracle or toy.
    #[arg(long)]
    pub denoiser: Option<DenoiserChoice>,
    /// Toy network checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Oracle prior mean.
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    /// Oracle prior variance.
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Continue this latent clip instead of generating from text.
    #[arg(long)]
    pub extend: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct InterpArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// interleave or stitch.
    #[arg(long)]
    pub mode: Option<InterpMode>,
    /// Input latent (the first half when stitching).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Second half when stitching.
    #[arg(long)]
    pub second: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the frame mask when interleaving.
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Vote CSV with header item_id,rater,choice,reasons.
    #[arg(long)]
    pub votes: Option<PathBuf>,
    /// Emit the simulated kappa curve instead of reading votes.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub simulate: Option<bool>,
    /// split or partial.
    #[arg(long)]
    pub replacement: Option<AgreementClass>,
    #[arg(long)]
    pub items: Option<usize>,
    /// Evenly spaced fractions from 0 to 1.
    #[arg(long)]
    pub points: Option<usize>,
    /// Write the report (JSON) or curve (CSV) here instead of only printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct CurateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub block: Option<usize>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub clip_min: Option<f64>,
    #[arg(long)]
    pub aesthetic_min: Option<f64>,
    #[arg(long)]
    pub motion_min: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Clips in the synthetic training set.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from this checkpoint instead of a fresh network.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Checkpoint output path; the loss curve goes to `<out>.loss.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Loads a partial configuration file over the defaults.
pub(crate) fn load_config<C: Default + DeserializeOwned>(path: Option<&Path>) -> CliResult<C> {
    match path {
        None => Ok(C::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
        }
    }
}

/// Runs the tool and returns its exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = if e.use_stderr() { write!(stderr, "{}", e.render()) } else { write!(stdout, "{}", e.render()) };
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Schedule(a) => commands::cmd_schedule(a, stdout),
        Command::Generate(a) => commands::cmd_generate(a, stdout),
        Command::InterpMask(a) => commands::cmd_interp_mask(a, stdout),
        Command::Eval(a) => commands::cmd_eval(a, stdout),
        Command::Curate(a) => commands::cmd_curate(a, stdout),
        Command::Train(a) => commands::cmd_train(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            e.exit_code()
        }
    }
}
