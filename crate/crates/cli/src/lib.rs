//! Experiment runner: config parsing, dispatch and result persistence.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use error::CliError;
pub use manifest::{read_manifest, Manifest, RunContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Edges,
    Windows,
    Train,
    TheoryCurves,
    Speciation,
    Memgap,
    Validate,
    Sample,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Edges => "edges",
            Command::Windows => "windows",
            Command::Train => "train",
            Command::TheoryCurves => "theory-curves",
            Command::Speciation => "speciation",
            Command::Memgap => "memgap",
            Command::Validate => "validate",
            Command::Sample => "sample",
        }
    }
}

/// Loads and validates the config, runs the command and writes the manifest.
/// Returns the output directory.
pub fn run(command: Command, config: Option<&Path>, overrides: &[String]) -> Result<PathBuf, CliError> {
    let config = ExperimentConfig::load(config, overrides)?;
    config.validate(command.name())?;
    run_config(command, config)
}

pub fn run_config(command: Command, config: ExperimentConfig) -> Result<PathBuf, CliError> {
    config.validate(command.name())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Threads(e.to_string()))?;
    let mut ctx = RunContext::new(config, command.name())?;
    let result = pool.install(|| match command {
        Command::Spectrum => commands::spectrum(&mut ctx),
        Command::Edges => commands::edges(&mut ctx),
        Command::Windows => commands::windows(&mut ctx),
        Command::Train => commands::train(&mut ctx),
        Command::TheoryCurves => commands::theory_curves(&mut ctx),
        Command::Speciation => commands::speciation(&mut ctx),
        Command::Memgap => commands::memgap(&mut ctx),
        Command::Validate => commands::validate(&mut ctx),
        Command::Sample => commands::sample(&mut ctx),
    });
    let out = ctx.out.clone();
    ctx.finish(&result)?;
    result.map(|_| out)
}
