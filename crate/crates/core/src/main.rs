use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mpmg::cli::{self, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "mpmg",
    about = "Mixed-precision multigrid laboratory for sparse SPD systems",
    version
)]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: mpmg-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write per-level cycle traces (trace.jsonl).
    #[arg(long, global = true)]
    trace: bool,
    /// Worker threads for sweeps; falls back to MPMG_THREADS, then 1.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Iterative refinement with a multigrid inner solver.
    Solve,
    /// One solve per axis point plus a fitted floor-scaling slope.
    Sweep,
    /// Predicted-versus-measured bound table.
    Bounds,
    /// Full multigrid with a per-level accuracy table.
    Fmg,
    /// Dump the problem and hierarchy in Matrix Market form.
    Gen,
}

fn run(args: &Args) -> mpmg::Result<i32> {
    let config_path = args
        .config
        .as_ref()
        .ok_or_else(|| mpmg::Error::Config("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::from_path(config_path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = cli::out_dir_or_default(args.out.clone());
    match args.command {
        Command::Solve => cli::cmd_solve(&cfg, &out, args.trace),
        Command::Sweep => cli::cmd_sweep(&cfg, &out, cli::resolve_threads(args.threads)),
        Command::Bounds => cli::cmd_bounds(&cfg, &out),
        Command::Fmg => cli::cmd_fmg(&cfg, &out),
        Command::Gen => cli::cmd_gen(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code_for(&e) as u8)
        }
    }
}
