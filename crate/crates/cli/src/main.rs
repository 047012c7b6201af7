//! `exon`: batch scoring, evaluation, sweeps and synthetic corpora over trace files.
//!
//! Exit codes: 0 success, 1 usage error, 2 data validation error, 3 internal error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use exon_core::{DetectorConfig, LayerSelect, Mapping};

#[derive(Parser, Debug)]
#[command(
    name = "exon",
    version,
    about = "Exon-aware detector for AI-generated text over model traces"
)]
struct Cli {
    /// Worker threads for per-document scoring.
    #[arg(long, global = true, env = "EXON_JOBS")]
    jobs: Option<usize>,

    /// Where to write the run manifest (default: <out>.manifest.json, or stderr).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score every document and emit a tab-separated table.
    Score(ScoreArgs),
    /// AUROC and F1 on a labeled corpus.
    Eval(EvalArgs),
    /// Evaluate a grid of detector configurations.
    Sweep(SweepArgs),
    /// AUROC and F1 with documents truncated to several lengths.
    Lengths(LengthsArgs),
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Check a trace file against every format invariant.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DetectorFlags {
    /// Discrepancy threshold.
    #[arg(long, default_value_t = 0.15)]
    theta: f64,
    /// Mapping slope.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, default_value = "nonlinear")]
    mapping: Mapping,
    /// all, forward:K or reverse:K.
    #[arg(long, default_value = "all")]
    layers: LayerSelect,
    /// Use the initial score without the argmax-sequence term.
    #[arg(long)]
    no_repair: bool,
    /// Disable exon reweighting (uniform token weights).
    #[arg(long)]
    uniform: bool,
}

impl DetectorFlags {
    fn config(&self, tau: f64) -> DetectorConfig {
        let c = DetectorConfig {
            theta: self.theta,
            alpha: self.alpha,
            mapping: self.mapping,
            layer_select: self.layers,
            repair_term: !self.no_repair,
            tau,
        };
        if self.uniform {
            c.uniform()
        } else {
            c
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct InputFlags {
    /// Trace file (format v1).
    trace: PathBuf,
    /// Tokens kept per document (prefix).
    #[arg(long, default_value_t = exon_core::MAX_TOKENS_DEFAULT)]
    max_tokens: usize,
}

#[derive(Args, Debug, Clone)]
pub struct TauFlags {
    /// Fixed decision threshold; otherwise it is calibrated.
    #[arg(long, conflicts_with = "calibrate_split")]
    tau: Option<f64>,
    /// Calibrate on this fraction of documents and evaluate on the rest.
    #[arg(long)]
    calibrate_split: Option<f64>,
    /// Seed for the calibration split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Json,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    input: InputFlags,
    #[command(flatten)]
    detector: DetectorFlags,
    /// Decision threshold.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Append every intermediate aggregate to each row.
    #[arg(long)]
    breakdown: bool,
    /// Output path (default stdout).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    input: InputFlags,
    #[command(flatten)]
    detector: DetectorFlags,
    #[command(flatten)]
    tau: TauFlags,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    input: InputFlags,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.10, 0.15, 0.20])]
    theta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 6.0, 10.0])]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "all")]
    layers: Vec<LayerSelect>,
    #[arg(long, value_delimiter = ',', default_value = "nonlinear")]
    mapping: Vec<Mapping>,
    #[arg(long)]
    no_repair: bool,
    #[command(flatten)]
    tau: TauFlags,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LengthsArgs {
    #[command(flatten)]
    input: InputFlags,
    #[command(flatten)]
    detector: DetectorFlags,
    #[command(flatten)]
    tau: TauFlags,
    #[arg(long, value_delimiter = ',', required = true)]
    lengths: Vec<usize>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    docs_per_class: usize,
    /// Tokens per document: N or MIN:MAX.
    #[arg(long, default_value = "200")]
    len: String,
    #[arg(long = "n-layers", default_value_t = 4)]
    n_layers: usize,
    #[arg(long, default_value_t = 1.0)]
    sep: f64,
    #[arg(long, default_value_t = 0.2)]
    exon_rate: f64,
    #[arg(long, default_value_t = 3.0)]
    enrich: f64,
    /// Output trace path (`-` for stdout).
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    trace: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(jobs) = cli.jobs.filter(|&j| j > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let ctx = commands::Context { manifest: cli.manifest };
    let result = match cli.command {
        Command::Score(a) => commands::score(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Sweep(a) => commands::sweep(&ctx, a),
        Command::Lengths(a) => commands::lengths(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Validate(a) => commands::validate(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
