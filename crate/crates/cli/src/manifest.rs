//! Run manifests and per-cell checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
const CHECKPOINT_DIR: &str = "checkpoints";

/// Everything needed to rerun an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub error: Option<String>,
    pub version: String,
    /// Readable echo of the config (non-finite numbers appear as null).
    pub config: serde_json::Value,
    /// Exact config; feed it back with `--config` to rerun.
    pub config_toml: String,
    pub master_seed: u64,
    /// Stream labels used to derive child seeds (`child_seed(master, index, label)`).
    pub seed_streams: Vec<String>,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub resumed_cells: usize,
    pub diagnostics: Vec<String>,
}

/// Output directory handle: tracks written files and diagnostics.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub command: String,
    pub out: PathBuf,
    started: Instant,
    outputs: Vec<String>,
    streams: Vec<String>,
    pub diagnostics: Vec<String>,
    resumed: usize,
}

impl RunContext {
    pub fn new(config: ExperimentConfig, command: &str) -> Result<Self, CliError> {
        let out = config.out.clone();
        std::fs::create_dir_all(&out).map_err(|e| CliError::Io(out.display().to_string(), e))?;
        Ok(Self {
            config,
            command: command.to_string(),
            out,
            started: Instant::now(),
            outputs: Vec::new(),
            streams: Vec::new(),
            diagnostics: Vec::new(),
            resumed: 0,
        })
    }

    /// Path of an output file; the name is recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        self.out.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.output(name);
        std::fs::write(&path, text).map_err(|e| CliError::Io(path.display().to_string(), e))
    }

    pub fn stream(&mut self, label: &str) {
        if !self.streams.iter().any(|s| s == label) {
            self.streams.push(label.to_string());
        }
    }

    /// Returns the stored value of `key` if it was computed under the same
    /// `inputs`; otherwise computes, stores and returns it.
    pub fn cell<T, I, F>(&mut self, key: &str, inputs: &I, compute: F) -> Result<T, CliError>
    where
        T: Serialize + DeserializeOwned,
        I: Serialize,
        F: FnOnce() -> Result<T, CliError>,
    {
        let dir = self.out.join(CHECKPOINT_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.display().to_string(), e))?;
        let path = dir.join(format!("{key}.json"));
        let inputs = serde_json::to_value(inputs)?;
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(stored) = serde_json::from_str::<Checkpoint<T>>(&text) {
                if stored.inputs == inputs {
                    self.resumed += 1;
                    return Ok(stored.value);
                }
            }
        }
        let value = compute()?;
        let record = Checkpoint { inputs, value };
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string(&record)?).map_err(|e| CliError::Io(tmp.display().to_string(), e))?;
        std::fs::rename(&tmp, &path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Ok(record.value)
    }

    /// Writes the manifest; called on success and on failure.
    pub fn finish(self, result: &Result<(), CliError>) -> Result<Manifest, CliError> {
        let manifest = Manifest {
            command: self.command,
            status: if result.is_ok() { "complete".into() } else { "failed".into() },
            error: result.as_ref().err().map(|e| e.to_string()),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: self.config.seed,
            config: serde_json::to_value(&self.config)?,
            config_toml: self.config.to_toml()?,
            seed_streams: self.streams,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
            resumed_cells: self.resumed,
            diagnostics: self.diagnostics,
        };
        std::fs::write(self.out.join(CONFIG_FILE), &manifest.config_toml).map_err(|e| CliError::Io(CONFIG_FILE.into(), e))?;
        let path = self.out.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Ok(manifest)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    inputs: serde_json::Value,
    value: T,
}

impl Manifest {
    /// The config the run used.
    pub fn experiment_config(&self) -> Result<ExperimentConfig, CliError> {
        toml::from_str(&self.config_toml).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Loads a manifest written by a previous run.
pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}
