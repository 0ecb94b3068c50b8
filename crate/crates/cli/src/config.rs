//! Experiment configuration: one TOML schema shared by every subcommand.
//!
//! Every section and field has a default, so an empty file is a valid
//! config. `--override key=value` edits the parsed document before it is
//! deserialized; dotted keys address nested sections.

use std::path::{Path, PathBuf};

use rfscore::spectral::{eps_schedule, SolverOptions};
use rfscore::speciation::{CovarianceKind, Imbalance};
use rfscore::Activation;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub mixture: MixtureConfig,
    pub model: ModelConfig,
    pub clock: ClockConfig,
    pub training: TrainingConfig,
    pub spectral: SpectralConfig,
    pub windows: WindowsConfig,
    pub speciation: SpeciationSection,
    pub memgap: MemgapSection,
    pub sample: SampleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("results"),
            threads: 1,
            mixture: MixtureConfig::default(),
            model: ModelConfig::default(),
            clock: ClockConfig::default(),
            training: TrainingConfig::default(),
            spectral: SpectralConfig::default(),
            windows: WindowsConfig::default(),
            speciation: SpeciationSection::default(),
            memgap: MemgapSection::default(),
            sample: SampleConfig::default(),
        }
    }
}

/// Gaussian mixture with mutually orthogonal centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureConfig {
    /// Data dimension `N`.
    pub n: usize,
    pub weights: Vec<f64>,
    pub variances: Vec<f64>,
    /// `‖m_c‖²/N` per class; all zeros gives the centered mixture.
    pub centroid_norms_sq: Vec<f64>,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            n: 100,
            weights: vec![0.5, 0.5],
            variances: vec![0.5, 0.25],
            centroid_norms_sq: vec![1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of features `P`.
    pub p: usize,
    /// Number of training samples `M`.
    pub m: usize,
    pub activation: Activation,
    pub quadrature_order: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            p: 2000,
            m: 1000,
            activation: Activation::Tanh,
            quadrature_order: rfscore::quadrature::DEFAULT_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    pub t: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self { t: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Learning rate `η = eta_factor·N/Δ`.
    pub eta_factor: f64,
    pub runs: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_points: usize,
    pub n_noise_draws: usize,
    pub n_eval: usize,
    /// Smoothing width (grid points) before extracting times.
    pub smoothing: f64,
    /// Level whose upward crossing marks the memorization time.
    pub threshold: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta_factor: 5e-5,
            runs: 20,
            tau_min: 1e-2,
            tau_max: 1e6,
            tau_points: 600,
            n_noise_draws: rfscore::covariance::DEFAULT_NOISE_DRAWS,
            n_eval: 20_000,
            smoothing: 2.0,
            threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub chi_p: f64,
    /// Use `inf` for the infinite-data limit.
    pub chi_m: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_points: usize,
    /// Points of the `ε` continuation schedule (a final `ε = 0` is appended).
    pub eps_points: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub truncation: f64,
    pub min_bulk_points: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            chi_p: 60.0,
            chi_m: 30.0,
            lambda_min: 1e-8,
            lambda_max: 1e2,
            lambda_points: 10_000,
            eps_points: 60,
            max_iter: o.max_iter,
            tol: o.tol,
            truncation: o.truncation,
            min_bulk_points: o.min_bulk_points,
        }
    }
}

impl SpectralConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            eps_schedule: eps_schedule(self.eps_points),
            max_iter: self.max_iter,
            tol: self.tol,
            truncation: self.truncation,
            min_bulk_points: self.min_bulk_points,
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        rfscore::dynamics::log_grid(self.lambda_min, self.lambda_max, self.lambda_points)
    }
}

/// Sweep of the variance ratio `v = σ₂²/σ₁²` and of `b₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowsConfig {
    pub sigma1_sq: f64,
    pub ratios: Vec<f64>,
    pub b1: Vec<f64>,
}

impl Default for WindowsConfig {
    fn default() -> Self {
        Self {
            sigma1_sq: 0.5,
            ratios: vec![0.25, 0.5, 0.75, 1.0],
            b1: vec![0.2, 0.35, 0.5, 0.65, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeciationSection {
    /// `(N, P)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub imbalance: Imbalance,
    pub variances: Vec<f64>,
    pub norm_exponents: Vec<f64>,
    pub m: usize,
    pub runs: usize,
    pub t_tilde: Vec<f64>,
    /// Number of top eigenvectors; 0 means one per class.
    pub k: usize,
    pub covariance: CovarianceKind,
}

impl Default for SpeciationSection {
    fn default() -> Self {
        Self {
            sizes: vec![(50, 100), (500, 1000)],
            imbalance: Imbalance::Strong { a: 0.5 },
            variances: vec![0.5, 0.5],
            norm_exponents: vec![0.0, 0.0],
            m: 2000,
            runs: 10,
            t_tilde: (1..=19).map(|i| 0.05 * i as f64).collect(),
            k: 0,
            covariance: CovarianceKind::Gep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemgapSection {
    /// Descriptor CSV, relative to the working directory.
    pub descriptors: PathBuf,
    pub b_grid: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub runs: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_points: usize,
}

impl Default for MemgapSection {
    fn default() -> Self {
        Self {
            descriptors: PathBuf::from("descriptors.csv"),
            b_grid: vec![0.25, 0.5, 0.75],
            thresholds: vec![1.0, 1.1, 1.2],
            n: 100,
            p: 10_000,
            m: 500,
            runs: 1,
            tau_min: 1e-2,
            tau_max: 1e8,
            tau_points: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Number of points to draw.
    pub count: usize,
    /// Also write the forward-noised points at `clock.t`.
    pub noised: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { count: 1000, noised: true }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    // Reuse the TOML grammar for numbers, booleans, arrays and inline tables.
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `key=value` edits to a parsed document.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<(), CliError> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Override(format!("'{item}' is not of the form key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(CliError::Override(format!("bad key '{key}'")));
        }
        let mut table = &mut *doc;
        for part in &path[..path.len() - 1] {
            let entry = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Override(format!("'{part}' in '{key}' is not a section")))?;
        }
        table.insert(path[path.len() - 1].to_string(), parse_scalar(raw.trim()));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies overrides and deserializes.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(p.display().to_string(), e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        apply_overrides(&mut doc, overrides)?;
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Every violated precondition, not just the first.
    pub fn violations(&self, command: &str) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        let mx = &self.mixture;
        let c = mx.weights.len();
        check(self.threads >= 1, "threads must be at least 1".into());
        check(mx.n >= 1, "mixture.n must be positive".into());
        check(c >= 1, "mixture.weights must list at least one class".into());
        check(mx.variances.len() == c, format!("mixture.variances has {} entries for {c} classes", mx.variances.len()));
        check(
            mx.centroid_norms_sq.len() == c,
            format!("mixture.centroid_norms_sq has {} entries for {c} classes", mx.centroid_norms_sq.len()),
        );
        check(mx.weights.iter().all(|&b| b.is_finite() && b >= 0.0), "mixture.weights must be nonnegative".into());
        check((mx.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9, "mixture.weights must sum to 1".into());
        check(mx.variances.iter().all(|&s| s.is_finite() && s > 0.0), "mixture.variances must be positive".into());
        check(
            mx.centroid_norms_sq.iter().all(|&s| s.is_finite() && s >= 0.0),
            "mixture.centroid_norms_sq must be nonnegative".into(),
        );
        check(self.model.p >= 1 && self.model.m >= 1, "model.p and model.m must be positive".into());
        check(self.model.quadrature_order >= 2, "model.quadrature_order must be at least 2".into());
        check(self.model.activation.is_odd(), format!("activation {} is not odd", self.model.activation.name()));
        check(self.clock.t.is_finite() && self.clock.t > 0.0, "clock.t must be positive".into());
        let tr = &self.training;
        check(tr.eta_factor.is_finite() && tr.eta_factor > 0.0, "training.eta_factor must be positive".into());
        check(tr.runs >= 1, "training.runs must be at least 1".into());
        check(tr.tau_min > 0.0 && tr.tau_max > tr.tau_min, "training needs 0 < tau_min < tau_max".into());
        check(tr.tau_points >= 3, "training.tau_points must be at least 3".into());
        check(tr.n_noise_draws >= 1 && tr.n_eval >= 1, "training.n_noise_draws and n_eval must be positive".into());
        check(tr.smoothing >= 0.0, "training.smoothing must be nonnegative".into());
        let sp = &self.spectral;
        check(sp.chi_p > 0.0 && sp.chi_m > 0.0, "spectral.chi_p and chi_m must be positive".into());
        check(sp.lambda_min > 0.0 && sp.lambda_max > sp.lambda_min, "spectral needs 0 < lambda_min < lambda_max".into());
        check(sp.lambda_points >= 3, "spectral.lambda_points must be at least 3".into());
        check(sp.eps_points >= 1 && sp.max_iter >= 1 && sp.tol > 0.0, "spectral solver settings must be positive".into());
        if command == "windows" {
            let w = &self.windows;
            check(w.sigma1_sq > 0.0, "windows.sigma1_sq must be positive".into());
            check(!w.ratios.is_empty() && w.ratios.iter().all(|&r| r > 0.0), "windows.ratios must be positive".into());
            check(!w.b1.is_empty() && w.b1.iter().all(|&b| b > 0.0 && b < 1.0), "windows.b1 must lie in (0, 1)".into());
        }
        if command == "speciation" {
            let s = &self.speciation;
            check(!s.sizes.is_empty(), "speciation.sizes must not be empty".into());
            check(s.sizes.iter().all(|&(n, p)| n >= 2 && p >= 2), "speciation sizes must be at least 2".into());
            check(s.runs >= 1 && s.m >= 1, "speciation.runs and m must be positive".into());
            check(!s.t_tilde.is_empty() && s.t_tilde.iter().all(|&t| t > 0.0), "speciation.t_tilde must be positive".into());
            let classes = match &s.imbalance {
                Imbalance::Weak(b) => b.len(),
                Imbalance::Strong { a } => {
                    check((0.0..=1.0).contains(a), "speciation strong exponent must lie in [0, 1]".into());
                    2
                }
            };
            check(s.variances.len() == classes, "speciation.variances must have one entry per class".into());
            check(s.k <= s.sizes.iter().map(|x| x.1).min().unwrap_or(0), "speciation.k exceeds P".into());
        }
        if command == "memgap" {
            let g = &self.memgap;
            check(!g.b_grid.is_empty() && g.b_grid.iter().all(|&b| b > 0.0 && b < 1.0), "memgap.b_grid must lie in (0, 1)".into());
            check(!g.thresholds.is_empty() && g.thresholds.iter().all(|&t| t > 0.0), "memgap.thresholds must be positive".into());
            check(g.n >= 1 && g.p >= 1 && g.m >= 1 && g.runs >= 1, "memgap sizes and runs must be positive".into());
            check(g.tau_min > 0.0 && g.tau_max > g.tau_min && g.tau_points >= 3, "memgap tau grid is invalid".into());
        }
        if command == "sample" {
            check(self.sample.count >= 1, "sample.count must be positive".into());
        }
        v
    }

    pub fn validate(&self, command: &str) -> Result<(), CliError> {
        let v = self.violations(command);
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Invalid(v))
        }
    }
}
