//! `adrl`: generate, mask, split, train, evaluate, and report.
//!
//! Exit codes: 0 on success, 1 for invalid input (including a failed
//! gradient check), 2 when training diverges.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use adrl::harness::Variant;
use adrl::data::MissingnessSpec;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adrl", version, about = "Incomplete multi-view multi-label classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with shared and view-private latent factors.
    Synth(SynthArgs),
    /// Tag every sample as train, val or test.
    Split(SplitArgs),
    /// Remove views and labels from a fully observed, split dataset.
    Mask(MaskArgs),
    /// Train on a split, masked dataset and write the run record.
    Train(TrainArgs),
    /// Score a saved model on one split of a dataset.
    Eval(EvalArgs),
    /// Train with one component switched off.
    Ablate(AblateArgs),
    /// Finite-difference check of the full objective.
    Gradcheck(GradcheckArgs),
    /// Summarize run directories into a table and plots.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    v: usize,
    #[arg(long, default_value_t = 6)]
    c: usize,
    #[arg(long, default_value_t = 8)]
    shared_dim: usize,
    #[arg(long, default_value_t = 4)]
    private_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// train:val:test proportions.
    #[arg(long, default_value = "7:1:2")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = parse_fmr)]
    fmr: f64,
    #[arg(long, default_value_t = 0.5, value_parser = parse_lmr)]
    lmr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Config file plus overrides, shared by `train` and `ablate`.
#[derive(Args)]
struct ConfigArgs {
    /// key=value config file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// `model.json` written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    split: SplitName,
    /// Write the metrics here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// full, no_S1, no_S2, no_S3, or all.
    #[arg(long, value_parser = parse_variants)]
    variant: VariantChoice,
    /// Treat the dataset as fully observed and run this many repetitions,
    /// each with its own split and masks.
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone)]
struct VariantChoice(Vec<Variant>);

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Scale::Tiny)]
    scale: Scale,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the per-parameter report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Tiny,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory searched recursively for run records.
    #[arg(long)]
    runs: PathBuf,
    /// Where the table and plots go; defaults to the runs directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_fmr(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    MissingnessSpec::new(x, 0.0, 0).map(|_| x).map_err(|e| e.to_string())
}

fn parse_lmr(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    MissingnessSpec::new(0.0, x, 0).map(|_| x).map_err(|e| e.to_string())
}

fn parse_variants(s: &str) -> Result<VariantChoice, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(VariantChoice(Variant::ALL.to_vec()));
    }
    s.parse().map(|v| VariantChoice(vec![v])).map_err(|e: adrl::Error| e.to_string())
}

/// Why a command stopped.
pub enum Failure {
    Invalid(String),
    Diverged(String),
}

impl From<adrl::Error> for Failure {
    fn from(e: adrl::Error) -> Self {
        if e.is_divergence() {
            Failure::Diverged(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

fn one_line(msg: &str) -> String {
    let msg = msg.trim().trim_start_matches("error: ");
    msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            _ => {
                // first line only; clap appends usage hints after a blank line
                let text = e.to_string();
                let first = text.split("\n\n").next().unwrap_or(&text);
                eprintln!("adrl: {}", one_line(first));
                return ExitCode::from(1);
            }
        },
    };
    let outcome = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Split(a) => commands::split(a),
        Command::Mask(a) => commands::mask(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Report(a) => report::run(&a.runs, a.out.as_deref().unwrap_or(&a.runs)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("adrl: {}", one_line(&msg));
            ExitCode::from(1)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("adrl: {}", one_line(&msg));
            ExitCode::from(2)
        }
    }
}
