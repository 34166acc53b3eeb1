use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dpwfl::{ExperimentConfig, ExperimentKind, Preset};

#[derive(Parser)]
#[command(name = "dpwfl", version, about = "Privacy accounting and simulation for over-the-air federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (`key = value` lines), applied after the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a named preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Override the seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// eps_DP(t) per sweep point, with the plain composition baseline.
    PrivacyCurve,
    /// Train, then write trace, ledger, bound report and dataset.
    Simulate,
    /// Convergence bound at target privacy levels.
    Tradeoff,
    /// Compare exact one-round divergences with the per-round bound.
    Verify,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let kind = match cli.command {
        Command::PrivacyCurve => ExperimentKind::PrivacyCurve,
        Command::Simulate => ExperimentKind::Simulate,
        Command::Tradeoff => ExperimentKind::Tradeoff,
        Command::Verify => ExperimentKind::Verify,
    };
    let mut cfg = match cli.preset {
        Some(p) => ExperimentConfig::preset(p),
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &cli.config {
        cfg = cfg.merge_file(path).with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output = out;
    }
    let output = dpwfl::run(kind, &cfg)?;
    std::fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    for artifact in &output.artifacts {
        let path = cfg.output.join(&artifact.name);
        std::fs::write(&path, &artifact.bytes).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    if output.in_regime_failures > 0 {
        eprintln!("{} in-regime verifier case(s) failed", output.in_regime_failures);
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
