//! Gaussian mixtures, their forward diffusion and exact scores.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigh;

/// Tolerance on `Σ b_c = 1`.
const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Smallest admissible eigenvalue of the centroid gram.
const GRAM_PSD_TOL: f64 = -1e-10;

/// Mixture of `C` isotropic Gaussians in dimension `N`.
///
/// Centroid geometry is given by the normalized gram
/// `r[c][c'] = m_c·m_c' / N`; [`realize_centroids`] turns it into vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub variances: Vec<f64>,
    pub centroid_gram: Vec<Vec<f64>>,
}

impl MixtureSpec {
    /// Mixture with zero centroids.
    pub fn centered(dim: usize, weights: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let c = weights.len();
        let spec = Self {
            dim,
            weights,
            variances,
            centroid_gram: vec![vec![0.0; c]; c],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Mixture with mutually orthogonal centroids of normalized squared norms `norms_sq`.
    pub fn orthogonal(dim: usize, weights: Vec<f64>, variances: Vec<f64>, norms_sq: &[f64]) -> Result<Self> {
        let c = weights.len();
        let mut gram = vec![vec![0.0; c]; c];
        for (i, row) in gram.iter_mut().enumerate() {
            row[i] = *norms_sq.get(i).ok_or_else(|| {
                Error::DimensionMismatch(format!("{} centroid norms for {c} classes", norms_sq.len()))
            })?;
        }
        let spec = Self {
            dim,
            weights,
            variances,
            centroid_gram: gram,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn gram_matrix(&self) -> Array2<f64> {
        let c = self.n_classes();
        Array2::from_shape_fn((c, c), |(i, j)| self.centroid_gram[i][j])
    }

    /// True when every centroid has zero norm.
    pub fn is_centered(&self) -> bool {
        self.centroid_gram.iter().enumerate().all(|(i, row)| row[i] == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.n_classes();
        let mut problems = Vec::new();
        if c == 0 {
            problems.push("mixture needs at least one class".to_string());
        }
        if self.dim == 0 {
            problems.push("dimension must be positive".to_string());
        }
        if self.variances.len() != c {
            problems.push(format!("{} variances for {c} classes", self.variances.len()));
        }
        if self.centroid_gram.len() != c || self.centroid_gram.iter().any(|r| r.len() != c) {
            problems.push(format!("centroid gram must be {c}x{c}"));
        }
        if self.weights.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            problems.push("weights must be finite and nonnegative".to_string());
        }
        let total: f64 = self.weights.iter().sum();
        if c > 0 && (total - 1.0).abs() > WEIGHT_SUM_TOL {
            problems.push(format!("weights sum to {total}, expected 1"));
        }
        if self.variances.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            problems.push("variances must be finite and positive".to_string());
        }
        if !problems.is_empty() {
            return Err(Error::InvalidArgument(problems.join("; ")));
        }
        for i in 0..c {
            for j in 0..i {
                if (self.centroid_gram[i][j] - self.centroid_gram[j][i]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument("centroid gram is not symmetric".into()));
                }
            }
        }
        let min_eig = sym_eigh(&self.gram_matrix().view())?.values.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < GRAM_PSD_TOL {
            return Err(Error::NonPsdGram(min_eig));
        }
        Ok(())
    }

    /// Reads a descriptor table with columns
    /// `class, variance, centroid_norm_normalized, cosine_to_reference`.
    ///
    /// The first row is the reference class. Off-diagonal gram entries between
    /// two non-reference classes are not determined by the table and are
    /// taken as `cos_a·cos_b·n_a·n_b`, the smallest-overlap completion
    /// consistent with both cosines.
    pub fn from_descriptor_csv<P: AsRef<Path>>(path: P, dim: usize, weights: Vec<f64>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            #[allow(dead_code)]
            class: String,
            variance: f64,
            centroid_norm_normalized: f64,
            cosine_to_reference: f64,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let rows: Vec<Row> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} descriptor rows for {} weights",
                rows.len(),
                weights.len()
            )));
        }
        let c = rows.len();
        let mut gram = vec![vec![0.0; c]; c];
        for i in 0..c {
            for j in 0..c {
                let (ni, nj) = (rows[i].centroid_norm_normalized, rows[j].centroid_norm_normalized);
                gram[i][j] = if i == j {
                    ni * ni
                } else if i == 0 || j == 0 {
                    let cos = if i == 0 { rows[j].cosine_to_reference } else { rows[i].cosine_to_reference };
                    cos * ni * nj
                } else {
                    rows[i].cosine_to_reference * rows[j].cosine_to_reference * ni * nj
                };
            }
        }
        let spec = Self {
            dim,
            weights,
            variances: rows.iter().map(|r| r.variance).collect(),
            centroid_gram: gram,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Two-class strong-imbalance weights `(1 − N^{−a}, N^{−a})`.
pub fn strong_imbalance_weights(n: usize, a: f64) -> Vec<f64> {
    let minority = (n as f64).powf(-a);
    vec![1.0 - minority, minority]
}

/// Forward-process clock: `Δ_t = 1 − e^{−2t}`, `Γ_c² = σ_c² e^{−2t} + Δ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionClock {
    t: f64,
}

impl DiffusionClock {
    pub fn new(t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("diffusion time {t} must be finite and >= 0")));
        }
        Ok(Self { t })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// `e^{−t}`.
    pub fn decay(&self) -> f64 {
        (-self.t).exp()
    }

    pub fn delta(&self) -> f64 {
        -(-2.0 * self.t).exp_m1()
    }

    pub fn gamma_sq(&self, variance: f64) -> f64 {
        variance * (-2.0 * self.t).exp() + self.delta()
    }

    pub fn gamma(&self, variance: f64) -> f64 {
        self.gamma_sq(variance).sqrt()
    }
}

/// Centroids (rows of a `C×N` matrix) whose normalized gram equals the spec's.
///
/// A square-root factor of `N·r` is placed on a random `C`-dimensional
/// orthonormal frame, which is the same as embedding it in the first `C`
/// coordinates and applying a Haar rotation.
pub fn realize_centroids<R: Rng + ?Sized>(spec: &MixtureSpec, rng: &mut R) -> Result<Array2<f64>> {
    spec.validate()?;
    let (c, n) = (spec.n_classes(), spec.dim);
    let eig = sym_eigh(&spec.gram_matrix().view())?;
    // factor[c, k] = Q[c, k]·sqrt(N λ_k), keeping only positive modes.
    let modes: Vec<usize> = (0..c).filter(|&k| eig.values[k] > 1e-14).collect();
    if modes.len() > n {
        return Err(Error::InvalidArgument(format!(
            "gram of rank {} cannot be realized in dimension {n}",
            modes.len()
        )));
    }
    let mut factor = Array2::<f64>::zeros((c, modes.len()));
    for (col, &k) in modes.iter().enumerate() {
        let s = (n as f64 * eig.values[k]).sqrt();
        for i in 0..c {
            factor[[i, col]] = eig.vectors[[i, k]] * s;
        }
    }
    let frame = random_orthonormal_rows(modes.len(), n, rng);
    Ok(factor.dot(&frame))
}

/// `k` orthonormal rows in `R^n` from Gram–Schmidt on Gaussian vectors.
pub fn random_orthonormal_rows<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((k, n));
    let mut i = 0;
    while i < k {
        let mut v: Array1<f64> = Array1::from_shape_fn(n, |_| rng.sample(StandardNormal));
        // Two passes keep orthogonality at machine precision.
        for _ in 0..2 {
            for j in 0..i {
                let proj = q.row(j).dot(&v);
                v.scaled_add(-proj, &q.row(j));
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        q.row_mut(i).assign(&(v / norm));
        i += 1;
    }
    q
}

/// Largest-remainder rounding of `b_c·M`; ties go to the lower class index.
pub fn class_counts(weights: &[f64], m: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|b| b * m as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(m.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

/// Training samples with their class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_indices: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_indices.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.class_indices.iter().map(Vec::len).collect()
    }

    /// Rows belonging to class `c`.
    pub fn class_samples(&self, c: usize) -> Array2<f64> {
        self.samples.select(Axis(0), &self.class_indices[c])
    }
}

/// Draws `n` samples of class `c` into the rows of an `n×N` matrix.
pub fn sample_class<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    centroids: &Array2<f64>,
    c: usize,
    n: usize,
    rng: &mut R,
) -> Array2<f64> {
    let sigma = spec.variances[c].sqrt();
    let mean = centroids.row(c);
    Array2::from_shape_fn((n, spec.dim), |(_, j)| {
        mean[j] + sigma * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Samples `M` points with deterministic class counts, rows grouped by class.
pub fn sample_dataset<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    centroids: &Array2<f64>,
    m: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidArgument("dataset size must be positive".into()));
    }
    if centroids.dim() != (spec.n_classes(), spec.dim) {
        return Err(Error::DimensionMismatch(format!(
            "centroids {:?} for {} classes in dimension {}",
            centroids.dim(),
            spec.n_classes(),
            spec.dim
        )));
    }
    let counts = class_counts(&spec.weights, m);
    let mut warnings = Vec::new();
    for (c, (&count, &b)) in counts.iter().zip(&spec.weights).enumerate() {
        if count == 0 && b > 0.0 {
            let msg = format!("class {c} with weight {b} receives no samples at M = {m}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let mut samples = Array2::<f64>::zeros((m, spec.dim));
    let mut labels = Vec::with_capacity(m);
    let mut class_indices = vec![Vec::new(); spec.n_classes()];
    let mut row = 0;
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let block = sample_class(spec, centroids, c, count, rng);
        samples.slice_mut(ndarray::s![row..row + count, ..]).assign(&block);
        for _ in 0..count {
            class_indices[c].push(row);
            labels.push(c);
            row += 1;
        }
    }
    Ok(Dataset {
        samples,
        labels,
        class_indices,
        warnings,
    })
}

/// `(x e^{−t} + √Δ_t ξ, ξ)` with a fresh standard normal `ξ`.
pub fn forward_noise<R: Rng + ?Sized>(x: ArrayView1<f64>, clock: &DiffusionClock, rng: &mut R) -> (Array1<f64>, Array1<f64>) {
    let xi: Array1<f64> = Array1::from_shape_fn(x.len(), |_| rng.sample(StandardNormal));
    let noised = &x * clock.decay() + &xi * clock.delta().sqrt();
    (noised, xi)
}

fn class_log_terms(x: ArrayView1<f64>, clock: &DiffusionClock, spec: &MixtureSpec, centroids: &ArrayView2<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let decay = clock.decay();
    (0..spec.n_classes())
        .map(|c| {
            let g2 = clock.gamma_sq(spec.variances[c]);
            let dist2: f64 = x
                .iter()
                .zip(centroids.row(c))
                .map(|(xi, mi)| (xi - decay * mi).powi(2))
                .sum();
            spec.weights[c].ln() - 0.5 * n * (2.0 * std::f64::consts::PI * g2).ln() - 0.5 * dist2 / g2
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// `log p_t(x)` of the noised mixture.
pub fn log_density(x: ArrayView1<f64>, clock: &DiffusionClock, spec: &MixtureSpec, centroids: &Array2<f64>) -> f64 {
    log_sum_exp(&class_log_terms(x, clock, spec, &centroids.view()))
}

/// Posterior class responsibilities `ζ_c(x, t)`.
pub fn responsibilities(x: ArrayView1<f64>, clock: &DiffusionClock, spec: &MixtureSpec, centroids: &Array2<f64>) -> Vec<f64> {
    let terms = class_log_terms(x, clock, spec, &centroids.view());
    let lse = log_sum_exp(&terms);
    terms.iter().map(|l| (l - lse).exp()).collect()
}

/// `∇ log p_t(x) = −Σ_c ζ_c (x − e^{−t} m_c)/Γ_c²`.
pub fn true_score(x: ArrayView1<f64>, clock: &DiffusionClock, spec: &MixtureSpec, centroids: &Array2<f64>) -> Array1<f64> {
    let zeta = responsibilities(x, clock, spec, centroids);
    let decay = clock.decay();
    let mut s = Array1::<f64>::zeros(x.len());
    for (c, z) in zeta.iter().enumerate() {
        if *z == 0.0 {
            continue;
        }
        let g2 = clock.gamma_sq(spec.variances[c]);
        for (j, sj) in s.iter_mut().enumerate() {
            *sj -= z * (x[j] - decay * centroids[[c, j]]) / g2;
        }
    }
    s
}
