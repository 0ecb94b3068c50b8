use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rfscore_cli::{run, Command};

#[derive(Parser)]
#[command(name = "rfscore", version, about = "Random-feature score model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML config file; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the config).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key=value` edits applied to the config; dotted keys address sections.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Spectral density of the feature covariance.
    Spectrum,
    /// Bulk edges, timescales and windows.
    Edges,
    /// Window sweep over variance ratio and class weight.
    Windows,
    /// Simulated gradient-descent loss curves.
    Train,
    /// Semi-analytical loss curves.
    TheoryCurves,
    /// Centroid/eigenvector overlaps across diffusion times.
    Speciation,
    /// Memorization gaps from pair descriptors.
    Memgap,
    /// Small-size oracle checks.
    Validate,
    /// Draw samples from the configured mixture.
    Sample,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Spectrum => Command::Spectrum,
            Cmd::Edges => Command::Edges,
            Cmd::Windows => Command::Windows,
            Cmd::Train => Command::Train,
            Cmd::TheoryCurves => Command::TheoryCurves,
            Cmd::Speciation => Command::Speciation,
            Cmd::Memgap => Command::Memgap,
            Cmd::Validate => Command::Validate,
            Cmd::Sample => Command::Sample,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &cli.out {
        overrides.push(format!("out={}", toml::Value::String(o.display().to_string())));
    }
    if let Some(t) = cli.threads {
        overrides.push(format!("threads={t}"));
    }
    match run(cli.command.into(), cli.config.as_deref(), &overrides) {
        Ok(dir) => {
            eprintln!("results in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
