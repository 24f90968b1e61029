use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::{error, info};
use qkinetic::config::RunConfig;
use qkinetic::runner::{emit_plot_data, exit_code_for, run, EXIT_CONFIG, EXIT_FAILURE};

/// Environment variable overriding the output directory of a run.
const OUT_DIR_ENV: &str = "QKINETIC_OUT_DIR";

#[derive(Parser)]
#[command(name = "qkinetic", version, about = "Quantum kinetic solver for a particle in a random-matrix bath")]
struct Cli {
    /// Log progress and diagnostics to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Worker threads for internal parallelism (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the job described by a TOML configuration file.
    Run {
        config: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; takes precedence over the environment and the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert the artifacts of a finished run into plain columnar files.
    EmitPlotData {
        run_dir: PathBuf,
        /// Destination directory (defaults to `<run-dir>/plot`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit densities for every snapshot instead of the final one.
        #[arg(long)]
        all: bool,
    },
}

fn output_dir(cfg: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", cfg.job_name(), &cfg.hash()[..12])))
}

fn execute(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = match RunConfig::load(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    error!("{}: {e}", config.display());
                    eprintln!("error: {}: {e}", config.display());
                    return Ok(exit_code_for(&e) as u8);
                }
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let dir = output_dir(&cfg, out);
            info!("job {} seed {} -> {}", cfg.job_name(), cfg.seed, dir.display());
            match run(&cfg, &dir) {
                Ok(outcome) => {
                    println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
                    Ok(outcome.exit_code as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Ok(exit_code_for(&e) as u8)
                }
            }
        }
        Command::EmitPlotData { run_dir, out, all } => {
            let dest = out.unwrap_or_else(|| run_dir.join("plot"));
            let files = emit_plot_data(&run_dir, &dest, all)
                .with_context(|| format!("emitting plot data from {}", run_dir.display()))?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE as u8)
        }
    }
}
