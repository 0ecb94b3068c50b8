//! Speciation experiment: alignment of the projected class centroids with the
//! top eigenvectors of the feature covariance along the diffusion time axis.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::covariance::{gep_u, largetime_u};
use crate::dynamics::gaussian_projection;
use crate::error::{Error, Result};
use crate::gep::{coeffs_vector, global_scalars};
use crate::gmm::{realize_centroids, sample_dataset, DiffusionClock, MixtureSpec};
use crate::linalg::sym_top_k;
use crate::quadrature::QuadratureRule;
use crate::seed::child_rng;

/// Relative eigenvalue gap below which the top-k subspace is ambiguous.
pub const DEGENERACY_GAP: f64 = 1e-12;

/// Overlap sums `Σ_i (μ_c·ψ_i)²/‖μ_c‖²` over the top eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapSums {
    pub per_class: Vec<f64>,
    /// Number of eigenvectors used (more than `k` when the k-th is degenerate).
    pub used: usize,
    pub degenerate: bool,
}

/// Squared overlaps of each projected centroid with the top-`k` eigenvectors of `u`.
pub fn overlap_sums(u: &Array2<f64>, mus: &[Array1<f64>], k: usize) -> Result<OverlapSums> {
    let p = u.nrows();
    if mus.iter().any(|m| m.len() != p) {
        return Err(Error::DimensionMismatch("projected centroids must have length P".into()));
    }
    let mut want = (k + 1).min(p);
    let mut eig = sym_top_k(&u.view(), want)?;
    let scale = eig.max_value().abs().max(f64::MIN_POSITIVE);
    let mut used = k.min(p);
    let mut degenerate = false;
    // Eigenvalues are ascending: the `used`-th largest sits at `want - used`.
    while used < p && eig.values[want - used] - eig.values[want - used - 1] < DEGENERACY_GAP * scale {
        degenerate = true;
        used += 1;
        if used >= want && used < p {
            want = (used + 1).min(p);
            eig = sym_top_k(&u.view(), want)?;
        }
        if used >= want {
            break;
        }
    }
    let n = eig.len();
    let top = eig.vectors.slice(ndarray::s![.., n - used..]);
    let per_class = mus
        .iter()
        .map(|m| {
            let norm2 = m.dot(m);
            if norm2 == 0.0 {
                0.0
            } else {
                top.t().dot(m).mapv(|v| v * v).sum() / norm2
            }
        })
        .collect();
    Ok(OverlapSums { per_class, used, degenerate })
}

/// `RMS_c = (mean over runs of the overlap sum)^{1/2}` and a delta-method standard error.
pub fn rms_over_runs(runs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let Some(first) = runs.first() else {
        return (Vec::new(), Vec::new());
    };
    let n = runs.len() as f64;
    let c = first.len();
    let mut rms = Vec::with_capacity(c);
    let mut err = Vec::with_capacity(c);
    for k in 0..c {
        let mean = runs.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = if n > 1.0 { runs.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let r = mean.max(0.0).sqrt();
        rms.push(r);
        err.push(if r > 0.0 { (var / n).sqrt() / (2.0 * r) } else { 0.0 });
    }
    (rms, err)
}

/// How sampling weights scale with `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imbalance {
    /// Fixed `O(1)` weights.
    Weak(Vec<f64>),
    /// Two classes with `b₂ = N^{−a}`, `b₁ = 1 − N^{−a}`.
    Strong { a: f64 },
}

impl Imbalance {
    pub fn weights(&self, n: usize) -> Vec<f64> {
        match self {
            Imbalance::Weak(b) => b.clone(),
            Imbalance::Strong { a } => crate::gmm::strong_imbalance_weights(n, *a),
        }
    }

    /// Exponent `a_c` with `b_c ∝ N^{−a_c}`.
    pub fn exponents(&self) -> Vec<f64> {
        match self {
            Imbalance::Weak(b) => vec![0.0; b.len()],
            Imbalance::Strong { a } => vec![0.0, *a],
        }
    }
}

/// Leading-order speciation time of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeciationPrediction {
    pub t_s: f64,
    pub t_tilde_s: f64,
}

/// `t_s⁽ᶜ⁾ = ((1 − a_c − e_c)/2) log N`, where `b_c ∝ N^{−a_c}` and
/// `‖m_c‖² ∝ N^{1−e_c}`; the `O(1)` correction is unknown and not included.
pub fn predict_speciation(n: usize, imbalance: &Imbalance, norm_exponents: &[f64]) -> Vec<SpeciationPrediction> {
    let log_n = (n as f64).ln();
    imbalance
        .exponents()
        .iter()
        .enumerate()
        .map(|(c, a)| {
            let e = norm_exponents.get(c).copied().unwrap_or(0.0);
            let tt = ((1.0 - a - e) / 2.0).max(0.0);
            SpeciationPrediction {
                t_s: tt * log_n,
                t_tilde_s: tt,
            }
        })
        .collect()
}

/// Which covariance to diagonalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    #[default]
    Gep,
    LargeTime,
}

/// Settings shared by all sizes of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciationConfig {
    pub variances: Vec<f64>,
    /// `‖m_c‖² = N^{1 − e_c}`; zeros give the extensive case `‖m_c‖² = N`.
    pub norm_exponents: Vec<f64>,
    pub m: usize,
    pub n_runs: usize,
    pub t_tilde: Vec<f64>,
    /// Number of top eigenvectors; `None` means one per class.
    pub k: Option<usize>,
    pub covariance: CovarianceKind,
    pub activation: Activation,
    pub quadrature_order: usize,
    pub seed: u64,
}

impl Default for SpeciationConfig {
    fn default() -> Self {
        Self {
            variances: vec![0.5, 0.5],
            norm_exponents: vec![0.0, 0.0],
            m: 2000,
            n_runs: 10,
            t_tilde: (1..=19).map(|i| 0.05 * i as f64).collect(),
            k: None,
            covariance: CovarianceKind::Gep,
            activation: Activation::Tanh,
            quadrature_order: crate::quadrature::DEFAULT_ORDER,
            seed: 0,
        }
    }
}

/// RMS overlap curves of one `(N, P)` size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciationCurve {
    pub n: usize,
    pub p: usize,
    pub n_runs: usize,
    pub imbalance: Imbalance,
    pub weights: Vec<f64>,
    pub t_tilde: Vec<f64>,
    /// `rms[c][i]` at `t_tilde[i]`.
    pub rms: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub predictions: Vec<SpeciationPrediction>,
    pub crossings: Vec<Option<f64>>,
    pub flags: Vec<String>,
}

impl SpeciationCurve {
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t_tilde,class,rms_mean,rms_stderr,n,p")?;
        for c in 0..self.rms.len() {
            for i in 0..self.t_tilde.len() {
                writeln!(out, "{:.16e},{c},{:.16e},{:.16e},{},{}", self.t_tilde[i], self.rms[c][i], self.stderr[c][i], self.n, self.p)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            n: usize,
            p: usize,
            n_runs: usize,
            imbalance: &'a Imbalance,
            weights: &'a [f64],
            predictions: &'a [SpeciationPrediction],
            crossings: &'a [Option<f64>],
            flags: &'a [String],
        }
        Ok(serde_json::to_string_pretty(&Sidecar {
            n: self.n,
            p: self.p,
            n_runs: self.n_runs,
            imbalance: &self.imbalance,
            weights: &self.weights,
            predictions: &self.predictions,
            crossings: &self.crossings,
            flags: &self.flags,
        })?)
    }
}

/// First `t̃`, scanning downward from the largest, where the curve exceeds
/// `level`, linearly interpolated with the preceding (larger) grid point.
pub fn crossing(t_tilde: &[f64], rms: &[f64], level: f64) -> Option<f64> {
    let mut order: Vec<usize> = (0..t_tilde.len()).collect();
    order.sort_by(|&a, &b| t_tilde[b].total_cmp(&t_tilde[a]));
    let mut prev: Option<usize> = None;
    for &i in &order {
        if rms[i] > level {
            return Some(match prev {
                Some(j) => {
                    let s = (level - rms[j]) / (rms[i] - rms[j]);
                    t_tilde[j] + s * (t_tilde[i] - t_tilde[j])
                }
                None => t_tilde[i],
            });
        }
        prev = Some(i);
    }
    None
}

/// Runs the experiment for each `(N, P)` and attaches the leading-order predictions.
pub fn speciation_sweep(config: &SpeciationConfig, sizes: &[(usize, usize)], imbalance: &Imbalance) -> Result<Vec<SpeciationCurve>> {
    let rule = QuadratureRule::new(config.quadrature_order)?;
    let (g_glob, bt_glob) = global_scalars(config.activation, &rule);
    let mut curves = Vec::with_capacity(sizes.len());
    for (size_index, &(n, p)) in sizes.iter().enumerate() {
        let weights = imbalance.weights(n);
        let c = weights.len();
        if config.variances.len() != c {
            return Err(Error::DimensionMismatch("variances and weights differ in length".into()));
        }
        // The spec stores ‖m_c‖²/N.
        let norms_sq: Vec<f64> = (0..c)
            .map(|k| (n as f64).powf(-config.norm_exponents.get(k).copied().unwrap_or(0.0)))
            .collect();
        let spec = MixtureSpec::orthogonal(n, weights.clone(), config.variances.clone(), &norms_sq)?;
        let k = config.k.unwrap_or(c);
        let mut flags = Vec::new();
        for (cls, b) in weights.iter().enumerate() {
            if b * (config.m as f64) < 1.0 {
                flags.push(format!("class {cls}: b·M = {:.3} < 1, represented by its population terms only", b * config.m as f64));
            }
        }
        let log_n = (n as f64).ln();
        // sums[i][run][class]
        let mut sums: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(config.n_runs); config.t_tilde.len()];
        let mut degenerate = 0usize;
        for run in 0..config.n_runs {
            let index = (size_index * config.n_runs + run) as u64;
            let mut rng = child_rng(config.seed, index, "speciation");
            let centroids = realize_centroids(&spec, &mut rng)?;
            let w = gaussian_projection(p, n, &mut rng);
            let data = sample_dataset(&spec, &centroids, config.m, &mut rng)?;
            let mus: Vec<Array1<f64>> = centroids.dot(&w.t()).axis_iter(Axis(0)).map(|r| r.to_owned() / (n as f64).sqrt()).collect();
            for (i, &tt) in config.t_tilde.iter().enumerate() {
                let clock = DiffusionClock::new(tt * log_n)?;
                let u: Array2<f64> = match config.covariance {
                    CovarianceKind::Gep => {
                        let coeffs = coeffs_vector(&w, &spec, &centroids, &clock, config.activation, &rule)?;
                        gep_u(&data, &w, &spec, &centroids, &coeffs, &mut rng)?.u
                    }
                    CovarianceKind::LargeTime => largetime_u(&w, &spec, &centroids, &clock, g_glob, bt_glob)?.u,
                };
                let o = overlap_sums(&u, &mus, k)?;
                degenerate += usize::from(o.degenerate);
                sums[i].push(o.per_class);
            }
        }
        if degenerate > 0 {
            flags.push(format!("{degenerate} diagonalizations had a degenerate k-th eigenvalue; invariant subspace used"));
        }
        let mut rms = vec![Vec::with_capacity(config.t_tilde.len()); c];
        let mut stderr = vec![Vec::with_capacity(config.t_tilde.len()); c];
        for runs in &sums {
            let (r, e) = rms_over_runs(runs);
            for cls in 0..c {
                rms[cls].push(r[cls]);
                stderr[cls].push(e[cls]);
            }
        }
        let crossings = rms.iter().map(|r| crossing(&config.t_tilde, r, 0.5)).collect();
        curves.push(SpeciationCurve {
            n,
            p,
            n_runs: config.n_runs,
            imbalance: imbalance.clone(),
            weights,
            t_tilde: config.t_tilde.clone(),
            rms,
            stderr,
            predictions: predict_speciation(n, imbalance, &config.norm_exponents),
            crossings,
            flags,
        });
    }
    Ok(curves)
}
