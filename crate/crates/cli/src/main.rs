//! `stylespace` — command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 missing prerequisite,
//! 4 provenance mismatch, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stylespace::Error;

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "stylespace", version, about = "StyleSpace analysis toolkit")]
struct Cli {
    /// Root for default output locations.
    #[arg(long, global = true, env = "STYLESPACE_OUT", default_value = "stylespace-out")]
    out: PathBuf,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a generator config file.
    Config(ConfigArgs),
    /// Sample an image bank.
    Bank(BankArgs),
    /// DCI scores per latent space.
    Dci(DciArgs),
    /// Locally-active channel detection.
    Local(LocalArgs),
    /// Relevance ranking and few-shot channel detection.
    Attr(AttrArgs),
    /// Attribute-dependency curves.
    Ad(AdArgs),
    /// tRGB perturbation response per layer group.
    Trgb(TrgbArgs),
    /// Invert a PPM image into a latent space.
    Invert(InvertArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Planted,
    Stylegan,
}

#[derive(Args, Debug, Clone)]
struct GeneratorArgs {
    /// Generator config JSON; overrides --kind/--gen-seed/--epsilon.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "planted")]
    kind: Kind,
    #[arg(long, default_value_t = 1)]
    gen_seed: u64,
    /// Planted leakage.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Output file (default `<out>/generator.json`).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    W,
    Wplus,
}

#[derive(Args, Debug)]
struct BankArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "w")]
    mode: Mode,
    /// Bank directory (default `<out>/bank`).
    #[arg(long)]
    dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct BankInput {
    /// Bank directory (default `<out>/bank`).
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Generator config to check against the bank's provenance.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DciArgs {
    #[command(flatten)]
    input: BankInput,
    /// W+-sampled bank, needed for the W+ space.
    #[arg(long)]
    wplus_bank: Option<PathBuf>,
    /// Comma-separated spaces out of Z, W, W+, S.
    #[arg(long, default_value = "Z,W,S")]
    spaces: String,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LocalArgs {
    #[command(flatten)]
    input: BankInput,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 32)]
    grid: usize,
    /// Overlap size-correction exponent.
    #[arg(long, default_value_t = 2.0)]
    d: f64,
    #[arg(long)]
    include_trgb: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AttrArgs {
    #[command(flatten)]
    input: BankInput,
    /// Output of `local`; restricts few-shot rankings to local channels.
    #[arg(long)]
    local: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30")]
    shots: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Fraction of the bank (lowest logits) used as positive exemplars.
    #[arg(long, default_value_t = 0.02)]
    quantile: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AdArgs {
    #[command(flatten)]
    input: BankInput,
    /// Output of `attr` (default `<out>/attr`).
    #[arg(long)]
    attr: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    r: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    candidates: usize,
    /// Attributes to manipulate (default all).
    #[arg(long, value_delimiter = ',')]
    attributes: Option<Vec<String>>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrgbArgs {
    #[command(flatten)]
    input: BankInput,
    #[arg(long, default_value_t = 100)]
    entries: usize,
    /// Perturbation scale in units of the population std.
    #[arg(long, default_value_t = 15.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Gradient {
    Adjoint,
    Forward,
    Fd,
}

#[derive(Args, Debug)]
struct InvertArgs {
    #[command(flatten)]
    input: BankInput,
    /// Target image (binary PPM).
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value = "S")]
    space: String,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    step_size: f64,
    #[arg(long, value_enum, default_value = "adjoint")]
    gradient: Gradient,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Style-vector JSON to start from; runs the short warm-start refinement.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Config(_) | Error::Dimension { .. } | Error::Json(_) | Error::Unsupported(_) => 2,
        Error::Io(_) => 2,
        Error::Missing(_) => 3,
        Error::Provenance(_) => 4,
        Error::Data(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
