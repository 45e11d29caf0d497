use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spm_cli::{execute, CliError, ExperimentConfig, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "spm", version, about = "Stochastic porous medium simulator and estimate checker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    config: PathBuf,
    /// Override a config value, e.g. `--set solver.dt=5e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever experiment the config describes.
    Run(RunArgs),
    Simulate(RunArgs),
    VerifyHypotheses(RunArgs),
    VerifyEstimates(RunArgs),
    Pullback(RunArgs),
    Attractor(RunArgs),
    InvariantMeasure(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (expected, args) = match cli.command {
        Command::Run(a) => (None, a),
        Command::Simulate(a) => (Some("simulate"), a),
        Command::VerifyHypotheses(a) => (Some("verify-hypotheses"), a),
        Command::VerifyEstimates(a) => (Some("verify-estimates"), a),
        Command::Pullback(a) => (Some("pullback"), a),
        Command::Attractor(a) => (Some("attractor"), a),
        Command::InvariantMeasure(a) => (Some("invariant-measure"), a),
    };
    let code = match go(expected, &args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("spm: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn go(expected: Option<&str>, args: &RunArgs) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text, &args.set)?;
    if let Some(kind) = expected {
        if cfg.experiment.name() != kind {
            return Err(CliError::Config(format!(
                "`spm {kind}` was given a `{}` config",
                cfg.experiment.name()
            )));
        }
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.directory.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.output.directory = Some(out.display().to_string());
    let (report, code) = execute(&cfg, &out, args.jobs)?;
    println!(
        "{} {}: {} ({})",
        report.kind,
        if report.passed { "PASS" } else { "FAIL" },
        out.display(),
        spm_cli::config_hash(&cfg)
    );
    if code != 0 && code != EXIT_CONFIG {
        eprintln!("spm: checks violated, see {}/summary.json", out.display());
    }
    Ok(code)
}
