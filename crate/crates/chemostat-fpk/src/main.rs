//! Command-line driver: `chemostat-fpk <kind> --config <path> --out <dir>`.
//! Log verbosity comes from the `RUST_LOG` environment variable.

use chemostat_fpk::config::ExperimentConfig;
use chemostat_fpk::experiment::{run_experiment, ExperimentKind};
use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "chemostat-fpk",
    version,
    about = "Stochastic chemostat: SDE ensembles and Fokker-Planck evolution with washout"
)]
struct Cli {
    /// Experiment kind: fp | sde | compare-models | haldane-snapshots |
    /// phase-portrait | validate
    kind: String,

    /// TOML configuration file
    #[arg(long)]
    config: PathBuf,

    /// Output directory
    #[arg(long)]
    out: PathBuf,

    /// Override the RNG seed from the config
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for the data-parallel loops (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("chemostat-fpk: failed to set thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    #[cfg(not(feature = "parallel"))]
    if let Some(threads) = cli.threads {
        if threads > 1 {
            log::warn!("built without the `parallel` feature; --threads {threads} ignored");
        }
    }

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chemostat-fpk: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}

fn run(cli: &Cli) -> chemostat_fpk::Result<()> {
    let kind: ExperimentKind = cli.kind.parse()?;
    let text = std::fs::read_to_string(&cli.config)?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.sde.seed = seed;
    }
    log::info!(
        "running `{}` on a {}x{} grid, out = {}",
        kind.name(),
        cfg.grid.n1 + 1,
        cfg.grid.n2 + 1,
        cli.out.display()
    );
    let manifest = run_experiment(&cfg, kind, &cli.out)?;
    println!("{}: wrote {} files to {}", kind.name(), manifest.files.len() + 1, cli.out.display());
    if let Some(obj) = manifest.summary.as_object() {
        for (k, v) in obj {
            println!("  {k} = {v}");
        }
    }
    Ok(())
}
