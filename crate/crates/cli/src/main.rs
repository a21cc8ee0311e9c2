use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use remshift::config::sha256_hex;
use remshift::pipeline::{Command, Run};

#[derive(Parser, Debug)]
#[command(name = "remshift", version)]
#[command(about = "Relational event models with global covariates via time-shifted partial likelihood")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate events (or write the synthetic ride fixture).
    Simulate(RunArgs),
    /// Draw dyad shifts and sample one control per shifted event.
    #[command(alias = "shift-sample")]
    Shift(RunArgs),
    /// Fit the degenerate logistic model and emit summary and curve tables.
    Fit(RunArgs),
    /// Fit, then estimate the cumulative baseline and λ₀.
    Baseline(RunArgs),
    /// Weibull bias comparison of shifted and full likelihood estimators.
    #[command(name = "compare-fullik", alias = "compare")]
    CompareFullik(RunArgs),
    /// Replication study over the configured sweeps.
    Study(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replications.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: the config's `out_dir`, else `out`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn run(command: Command, args: &RunArgs) -> remshift::Result<()> {
    let mut run = Run::from_file(&args.config)?;
    let mut overridden = false;
    if let Some(seed) = args.seed {
        run.config.seed = seed;
        overridden = true;
    }
    if let Some(workers) = args.workers {
        run.config.workers = workers;
        overridden = true;
    }
    if overridden {
        run.config.validate()?;
        // The digest then describes the effective configuration.
        run.config_digest.sha256 = sha256_hex(run.config.to_toml()?.as_bytes());
        run.config_digest.path = format!("{} (with overrides)", args.config.display());
    }
    if let Some(dir) = &args.out_dir {
        run.out_dir = dir.clone();
    }
    let manifest = run.execute(command)?;
    for o in &manifest.outputs {
        println!("{}\t{}", o.sha256, run.out_dir.join(&o.path).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Shift(a) => (Command::Shift, a),
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::Baseline(a) => (Command::Baseline, a),
        Cmd::CompareFullik(a) => (Command::CompareFullik, a),
        Cmd::Study(a) => (Command::Study, a),
    };
    match run(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
