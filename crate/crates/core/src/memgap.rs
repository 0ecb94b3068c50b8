//! Memorization gaps between a reference class and a partner class, for
//! mixtures built from per-class descriptors.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::dynamics::{log_grid, semi_analytic_instance, ErrorCurves, TimeExtraction};
use crate::error::{Error, Result};
use crate::gmm::{DiffusionClock, MixtureSpec};
use crate::quadrature::QuadratureRule;
use crate::seed::child_rng;

/// Statistics of a (reference, partner) class pair.
///
/// Norms are centroid norms divided by `√N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDescriptor {
    pub pair_id: String,
    pub ref_variance: f64,
    pub ref_norm: f64,
    pub partner_variance: f64,
    pub partner_norm: f64,
    pub cosine: f64,
}

impl PairDescriptor {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.ref_variance, self.ref_norm, self.partner_variance, self.partner_norm, self.cosine];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("pair {}: non-finite descriptor", self.pair_id)));
        }
        if self.ref_variance <= 0.0 || self.partner_variance <= 0.0 {
            return Err(Error::InvalidArgument(format!("pair {}: variances must be positive", self.pair_id)));
        }
        if self.ref_norm < 0.0 || self.partner_norm < 0.0 {
            return Err(Error::InvalidArgument(format!("pair {}: norms must be nonnegative", self.pair_id)));
        }
        if self.cosine.abs() > 1.0 {
            return Err(Error::InvalidArgument(format!("pair {}: |cosine| exceeds 1", self.pair_id)));
        }
        Ok(())
    }

    /// `r_v = σ²_ref / σ²_partner`.
    pub fn variance_ratio(&self) -> f64 {
        self.ref_variance / self.partner_variance
    }

    /// The pair seen from the partner's side.
    pub fn swapped(&self) -> Self {
        Self {
            pair_id: format!("{}_swapped", self.pair_id),
            ref_variance: self.partner_variance,
            ref_norm: self.partner_norm,
            partner_variance: self.ref_variance,
            partner_norm: self.ref_norm,
            cosine: self.cosine,
        }
    }

    /// Two-class mixture with weights `(1 − b, b)`, reference first.
    pub fn mixture(&self, dim: usize, b_partner: f64) -> Result<MixtureSpec> {
        self.validate()?;
        if !(b_partner > 0.0 && b_partner < 1.0) {
            return Err(Error::InvalidArgument(format!("partner proportion {b_partner} must lie in (0, 1)")));
        }
        let off = self.cosine * self.ref_norm * self.partner_norm;
        let spec = MixtureSpec {
            dim,
            weights: vec![1.0 - b_partner, b_partner],
            variances: vec![self.ref_variance, self.partner_variance],
            centroid_gram: vec![vec![self.ref_norm.powi(2), off], vec![off, self.partner_norm.powi(2)]],
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Reads a table with columns `pair_id, ref_variance, ref_norm, partner_variance, partner_norm, cosine`.
pub fn read_descriptors<P: AsRef<Path>>(path: P) -> Result<Vec<PairDescriptor>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let rows: Vec<PairDescriptor> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    for r in &rows {
        r.validate()?;
    }
    Ok(rows)
}

/// Model and grid settings for the random-feature side of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemgapConfig {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub t: f64,
    pub n_runs: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_points: usize,
    pub smoothing: f64,
    pub activation: Activation,
    pub quadrature_order: usize,
    pub seed: u64,
}

impl Default for MemgapConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 10_000,
            m: 500,
            t: 0.01,
            n_runs: 1,
            tau_min: 1e-2,
            tau_max: 1e8,
            tau_points: 400,
            smoothing: 2.0,
            activation: Activation::Tanh,
            quadrature_order: crate::quadrature::DEFAULT_ORDER,
            seed: 0,
        }
    }
}

impl MemgapConfig {
    pub fn tau_grid(&self) -> Vec<f64> {
        log_grid(self.tau_min, self.tau_max, self.tau_points)
    }
}

/// Run-averaged semi-analytical curves of one two-class mixture.
///
/// Every call with the same config uses the same seeds, so equal specs give equal curves.
pub fn pair_curves(spec: &MixtureSpec, config: &MemgapConfig, rule: &QuadratureRule) -> Result<ErrorCurves> {
    let clock = DiffusionClock::new(config.t)?;
    let tau = config.tau_grid();
    let runs = (0..config.n_runs.max(1))
        .map(|run| {
            let mut rng = child_rng(config.seed, run as u64, "memgap");
            Ok(semi_analytic_instance(spec, config.p, config.m, &clock, config.activation, rule, &mut rng)?.curves(&tau))
        })
        .collect::<Result<Vec<_>>>()?;
    ErrorCurves::average(&runs)
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub pair_id: String,
    pub b_partner: f64,
    pub threshold: f64,
    /// `τ_m^ref − τ_m^partner`; `None` if either class never crosses the threshold.
    pub gap: Option<f64>,
    pub tau_m_ref: Option<f64>,
    pub tau_m_partner: Option<f64>,
    pub tau_g_ref: f64,
    pub tau_g_partner: f64,
    pub flags: String,
}

/// Gap rows for each threshold, read off one set of curves.
pub fn gaps_from_curves(pair_id: &str, b_partner: f64, curves: &ErrorCurves, thresholds: &[f64], smoothing: f64) -> Result<Vec<GapRow>> {
    thresholds
        .iter()
        .map(|&threshold| {
            let times = curves.class_times(&TimeExtraction { smoothing, threshold })?;
            let (r, q) = (&times[0], &times[1]);
            let mut flags = Vec::new();
            if r.tau_m.is_none() {
                flags.push("ref_threshold_not_crossed");
            }
            if q.tau_m.is_none() {
                flags.push("partner_threshold_not_crossed");
            }
            if r.min_at_end || q.min_at_end {
                flags.push("minimum_at_grid_end");
            }
            Ok(GapRow {
                pair_id: pair_id.to_string(),
                b_partner,
                threshold,
                gap: r.tau_m.zip(q.tau_m).map(|(a, b)| a - b),
                tau_m_ref: r.tau_m,
                tau_m_partner: q.tau_m,
                tau_g_ref: r.tau_g,
                tau_g_partner: q.tau_g,
                flags: flags.join(";"),
            })
        })
        .collect()
}

/// Memorization gap of one pair at one proportion and threshold multiple.
pub fn gap_from_descriptors(desc: &PairDescriptor, b_partner: f64, threshold: f64, config: &MemgapConfig) -> Result<GapRow> {
    let rule = QuadratureRule::new(config.quadrature_order)?;
    let spec = desc.mixture(config.n, b_partner)?;
    let curves = pair_curves(&spec, config, &rule)?;
    Ok(gaps_from_curves(&desc.pair_id, b_partner, &curves, &[threshold], config.smoothing)?.remove(0))
}

/// Full cross product of pairs, proportions and thresholds.
///
/// Curves are computed once per distinct mixture and shared across thresholds
/// and across rows that produce the same mixture.
pub fn gap_sweep(descriptors: &[PairDescriptor], b_grid: &[f64], thresholds: &[f64], config: &MemgapConfig) -> Result<Vec<GapRow>> {
    let rule = QuadratureRule::new(config.quadrature_order)?;
    let mut cache: HashMap<String, ErrorCurves> = HashMap::new();
    let mut rows = Vec::with_capacity(descriptors.len() * b_grid.len() * thresholds.len());
    for desc in descriptors {
        for &b in b_grid {
            let spec = desc.mixture(config.n, b)?;
            let key = serde_json::to_string(&spec)?;
            let curves = match cache.get(&key) {
                Some(c) => c.clone(),
                None => {
                    log::info!("memgap: pair {} at b = {b}", desc.pair_id);
                    let c = pair_curves(&spec, config, &rule)?;
                    cache.insert(key, c.clone());
                    c
                }
            };
            rows.extend(gaps_from_curves(&desc.pair_id, b, &curves, thresholds, config.smoothing)?);
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

/// Results CSV: `pair_id, b_partner, threshold, gap, tau_m_ref, tau_m_partner, tau_g_ref, tau_g_partner, flags`.
pub fn write_gap_csv<P: AsRef<Path>>(rows: &[GapRow], path: P) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "pair_id,b_partner,threshold,gap,tau_m_ref,tau_m_partner,tau_g_ref,tau_g_partner,flags")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.10e},{:.10e},{}",
            r.pair_id,
            r.b_partner,
            r.threshold,
            opt(r.gap),
            opt(r.tau_m_ref),
            opt(r.tau_m_partner),
            r.tau_g_ref,
            r.tau_g_partner,
            r.flags
        )?;
    }
    out.flush()?;
    Ok(())
}
