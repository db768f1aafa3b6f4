//! `svf`: verification suites, scaling and energy reports, and toy training.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 verification failure,
//! 3 numerical divergence.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use svf_core::{Score, Variant};

use commands::Status;

#[derive(Parser, Debug)]
#[command(name = "svf", version, about = "Spike-driven attention workbench")]
struct Cli {
    /// Workbench configuration file (`svf print-config` shows every key).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Binary embedding error curve and concentration bound.
    JlVerify(JlArgs),
    /// Exactness checks for the Hamming identity, linear attention order and neuron contracts.
    EquivCheck(EquivArgs),
    /// Accumulate counts of spike attention against the quadratic baseline over T.
    AttnBench(BenchArgs),
    /// Instrumented forward pass with per-layer energy estimates.
    EnergyReport(EnergyArgs),
    /// Train the toy motion task and check the accuracy expectation for the variant.
    TrainToy(TrainArgs),
    /// Print the effective configuration, including every default.
    PrintConfig,
}

#[derive(Args, Debug)]
struct JlArgs {
    /// Code lengths, in increasing order.
    #[arg(long, value_delimiter = ',', default_value = "16,64,256,1024")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Dimension of the real input vectors.
    #[arg(long, default_value_t = 64)]
    input_dim: usize,
    /// Deviation for the concentration check at the largest code length.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EquivArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 64)]
    max_dims: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Flip one output bit so the harness must report a mismatch.
    #[arg(long)]
    self_test: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_parser = parse_variant, default_value = "joint")]
    variant: Variant,
    #[arg(long, value_parser = parse_score, default_value = "hamming")]
    score: Score,
    #[arg(
        long = "T-list",
        alias = "t-list",
        value_delimiter = ',',
        default_value = "4,8,16,32,64"
    )]
    t_list: Vec<usize>,
    /// Tokens per frame.
    #[arg(long = "N", alias = "n", default_value_t = 16)]
    n: usize,
    /// Embedding width.
    #[arg(long = "D", alias = "d", default_value_t = 32)]
    d: usize,
    /// Attention heads.
    #[arg(long = "M", alias = "m", default_value_t = 1)]
    m: usize,
    /// Bernoulli firing rate of the input spikes.
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EnergyArgs {
    /// SVT1 tensor: spikes `[B, T, N, D]` (or `[T, N, D]`) run through one
    /// attention module, real frames `[T, H, W, C]` through the backbone.
    #[arg(long)]
    input: PathBuf,
    /// Weight manifest; random weights from `--seed` when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_variant, default_value = "joint")]
    variant: Variant,
    /// Defaults to `training.epochs` from the configuration.
    #[arg(long)]
    epochs: Option<usize>,
    /// Defaults to `training.seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: svf_core::Error| e.to_string())
}

fn parse_score(s: &str) -> Result<Score, String> {
    s.parse().map_err(|e: svf_core::Error| e.to_string())
}

/// Caps the global rayon pool at `SVF_THREADS` when set.
fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("SVF_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("SVF_THREADS=`{raw}` is not a thread count"))?;
    if threads == 0 {
        bail!("SVF_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let diverged = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<svf_core::Error>(),
            Some(svf_core::Error::Divergence { .. })
        )
    });
    if diverged {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("svf: error: {e:#}");
        return ExitCode::from(1);
    }
    match commands::run(cli) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail(msg)) => {
            eprintln!("svf: check failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("svf: error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
