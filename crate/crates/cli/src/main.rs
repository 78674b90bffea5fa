//! `tridet` command-line interface.
//!
//! Exit codes: 0 on success, 2 on validation errors (bad configuration,
//! missing or malformed input), 3 on numeric failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tridet_core::commands::{cmd_diagnose, cmd_eval, cmd_generate, cmd_train};
use tridet_core::config::RunConfig;
use tridet_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "tridet",
    version,
    about = "Temporal action detection with an SGP pyramid and Trident head"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Checkpoint to evaluate, or to resume training from.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.bin and curve.csv.
    Train,
    /// Evaluate a checkpoint; writes metrics.csv and detections.json.
    Eval,
    /// Run the numerical diagnostics; writes rank_loss.csv and summary.txt.
    Diagnose,
    /// Write the configured synthetic dataset to disk.
    Generate,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        if let Some(spec) = &mut cfg.data.synthetic {
            spec.seed = s;
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Train => {
            let out = cmd_train(&cfg, &cli.out, cli.checkpoint.as_deref())?;
            if let Some(last) = out.logs.last() {
                println!("epoch {}: loss {:.6}", last.epoch, last.loss.total);
            }
            println!(
                "wrote {} and {}",
                out.checkpoint.display(),
                out.curve.display()
            );
        }
        Command::Eval => {
            let checkpoint = cli
                .checkpoint
                .as_deref()
                .ok_or_else(|| Error::config("eval requires --checkpoint"))?;
            print!("{}", cmd_eval(&cfg, checkpoint, &cli.out)?.to_csv());
        }
        Command::Diagnose => {
            let out = cmd_diagnose(&cfg, &cli.out)?;
            for line in &out.lines {
                println!("{line}");
            }
            return Ok(out.passed);
        }
        Command::Generate => {
            let spec = cfg.data.synthetic.clone().unwrap_or_default();
            cmd_generate(&spec, &cli.out)?;
            println!("wrote synthetic dataset to {}", cli.out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        // A failed diagnostic is a numeric failure.
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
