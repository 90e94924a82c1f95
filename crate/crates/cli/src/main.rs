//! Command-line front end: synthesize data, train and distill networks,
//! evaluate checkpoints, and export per-chunk attributions.
//!
//! Exit codes: 0 on success, 1 on runtime or data failures, 2 on usage
//! errors (bad flags, bad config files). Output is deterministic for a
//! fixed seed and never embeds timestamps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::TrainFlags;

#[derive(Parser, Debug)]
#[command(
    name = "somnonet",
    version,
    about = "Sleep staging over single-channel EEG: synthesize data, train and \
             distill networks, evaluate checkpoints, and explain decisions."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate synthetic labeled EEG and write it as one SSEF recording
    Synth(SynthArgs),
    /// Train the full network, or a linear probe head over a trained encoder
    Train(TrainArgs),
    /// Distill a trained network into the compact variant (frozen encoder)
    DistillNano(DistillArgs),
    /// Stage recordings with a checkpoint and report agreement metrics
    Eval(EvalArgs),
    /// Export per-chunk attributions of staging decisions as CSV + SVG
    Attribute(AttributeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Simulated subjects, concatenated into the output file
    #[arg(long, default_value_t = 1)]
    subjects: usize,
    /// Epochs per subject
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    /// Sampling rate in Hz
    #[arg(long, default_value_t = 100)]
    rate: u32,
    /// Epoch length in seconds
    #[arg(long, default_value_t = 30)]
    epoch_len: u16,
    /// Stage mix W,N1,N2,N3,R; weights are normalized internally
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.2,0.2,0.2,0.2")]
    class_mix: Vec<f64>,
    /// Additive background noise level in µV
    #[arg(long, default_value_t = 10.0)]
    noise_sigma: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output signal file; annotations land next to it as `.ann`
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training recordings (repeatable)
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Validation recordings; when omitted, the last training recording is
    /// held out
    #[arg(long, num_args = 1..)]
    val: Vec<PathBuf>,
    /// `somnonet` trains the full network; `head` fits a linear probe on a
    /// trained encoder's mean chunk features
    #[arg(long, default_value = "somnonet", value_parser = ["somnonet", "head"])]
    arch: String,
    /// Checkpoint whose encoder feeds the probe (head training only)
    #[arg(long)]
    parent: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
    /// Checkpoint output (model geometry lands next to it as `.cfg`)
    #[arg(short, long, default_value = "somnonet.snwt")]
    out: PathBuf,
    /// History CSV output [default: checkpoint path with `.history.csv`]
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DistillArgs {
    /// Trained full-network checkpoint to distill from
    #[arg(long)]
    parent: PathBuf,
    /// Training recordings (repeatable)
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Validation recordings; when omitted, the last training recording is
    /// held out
    #[arg(long, num_args = 1..)]
    val: Vec<PathBuf>,
    /// Training knobs; model geometry always comes from the parent
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(short, long, default_value = "nano.snwt")]
    out: PathBuf,
    /// History CSV output [default: checkpoint path with `.history.csv`]
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Recordings to stage (repeatable)
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Write the confusion matrix CSV here instead of stdout
    #[arg(long)]
    confusion_out: Option<PathBuf>,
    /// Average macro-F1 over all classes, not only those present
    #[arg(long)]
    include_absent: bool,
    /// Feed raw instead of per-recording standardized signals
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Args, Debug)]
struct AttributeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Linear probe file; required by voting/forward/backward
    #[arg(long)]
    head: Option<PathBuf>,
    /// Recordings to explain (repeatable)
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long, value_parser = ["voting", "forward", "backward", "sequence"])]
    method: String,
    /// Comma-separated epoch indices; every scored epoch when omitted
    #[arg(long, value_delimiter = ',')]
    epochs: Vec<usize>,
    /// Negate gradient scores (the literal sensitivity convention)
    #[arg(long)]
    paper_sign: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Feed raw instead of per-recording standardized signals
    #[arg(long)]
    no_standardize: bool,
}

/// Marker for post-parse errors that are still the caller's fault; they
/// exit with the usage code.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synth(args) => commands::synth(args),
        Cmd::Train(args) => commands::train(args),
        Cmd::DistillNano(args) => commands::distill_nano(args),
        Cmd::Eval(args) => commands::eval(args),
        Cmd::Attribute(args) => commands::attribute(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<Usage>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
