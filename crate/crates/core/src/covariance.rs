//! Feature correlation matrices `U` (`P×P`) and feature–noise matrices `V` (`P×N`).
//!
//! Empirical estimates average over samples and fresh diffusion noise; the
//! Gaussian-equivalent (`gep`) forms replace the nonlinear features by their
//! linear-plus-noise surrogate; the population form averages the surrogate
//! over the data distribution.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::gep::GepCoefficients;
use crate::gmm::{Dataset, DiffusionClock, MixtureSpec};
use crate::linalg::{symmetrize, syrk_ata_add, SymEigen};

/// Rows processed per GEMM/SYRK chunk in the Monte Carlo estimators.
const CHUNK_ROWS: usize = 2048;
/// Default number of diffusion-noise draws per sample.
pub const DEFAULT_NOISE_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Empirical,
    Gep,
    Population,
    LargeTime,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::Empirical => "empirical",
            Provenance::Gep => "gep",
            Provenance::Population => "population",
            Provenance::LargeTime => "large_time",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "empirical" => Provenance::Empirical,
            "gep" => Provenance::Gep,
            "population" => Provenance::Population,
            "large_time" => Provenance::LargeTime,
            other => return Err(Error::Dump(format!("unknown provenance `{other}`"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct FeatureCovariance {
    pub u: Array2<f64>,
    pub provenance: Provenance,
    pub clock: DiffusionClock,
}

impl FeatureCovariance {
    pub fn dim(&self) -> usize {
        self.u.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct NoiseCovariance {
    pub v: Array2<f64>,
    pub provenance: Provenance,
    pub clock: DiffusionClock,
}

/// Monte Carlo estimates of `U` and `V` from the same noise draws.
#[derive(Debug, Clone)]
pub struct EmpiricalEstimate {
    pub u: FeatureCovariance,
    pub v: NoiseCovariance,
    pub warnings: Vec<String>,
}

fn check_w(w: &Array2<f64>, n: usize) -> Result<()> {
    if w.ncols() != n {
        return Err(Error::DimensionMismatch(format!("W has {} columns, data dimension is {n}", w.ncols())));
    }
    Ok(())
}

/// `φ(X Wᵀ/√N)` for the rows of `x`.
pub fn features(x: &ArrayView2<f64>, w: &Array2<f64>, activation: Activation) -> Array2<f64> {
    let scale = 1.0 / (w.ncols() as f64).sqrt();
    let mut pre = x.dot(&w.t());
    pre.mapv_inplace(|v| activation.eval(v * scale));
    pre
}

/// Monte Carlo `U = Σ_c b_c U_c` and `V = Σ_c b_c V_c` with `n_noise_draws`
/// noise vectors per training sample.
pub fn empirical_uv<R: Rng + ?Sized>(
    dataset: &Dataset,
    w: &Array2<f64>,
    weights: &[f64],
    clock: &DiffusionClock,
    activation: Activation,
    n_noise_draws: usize,
    rng: &mut R,
) -> Result<EmpiricalEstimate> {
    if n_noise_draws == 0 {
        return Err(Error::InvalidArgument("n_noise_draws must be at least 1".into()));
    }
    if weights.len() != dataset.n_classes() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} classes",
            weights.len(),
            dataset.n_classes()
        )));
    }
    let n = dataset.dim();
    check_w(w, n)?;
    let p = w.nrows();
    let (decay, sd) = (clock.decay(), clock.delta().sqrt());
    let mut u = Array2::<f64>::zeros((p, p));
    let mut v = Array2::<f64>::zeros((p, n));
    let mut warnings = Vec::new();
    for (c, idx) in dataset.class_indices.iter().enumerate() {
        if idx.is_empty() {
            if weights[c] > 0.0 {
                let msg = format!("class {c} has no samples and contributes nothing to U, V");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            continue;
        }
        let scale = weights[c] / (idx.len() * n_noise_draws) as f64;
        let total = idx.len() * n_noise_draws;
        let mut start = 0;
        while start < total {
            let rows = CHUNK_ROWS.min(total - start);
            let xi = Array2::from_shape_fn((rows, n), |_| rng.sample::<f64, _>(StandardNormal));
            let mut noised = Array2::<f64>::zeros((rows, n));
            for r in 0..rows {
                let sample = dataset.samples.row(idx[(start + r) / n_noise_draws]);
                Zip::from(noised.row_mut(r))
                    .and(&sample)
                    .and(xi.row(r))
                    .for_each(|o, &x, &z| *o = decay * x + sd * z);
            }
            let phi = features(&noised.view(), w, activation);
            syrk_ata_add(&mut u, &phi.view(), scale);
            ndarray::linalg::general_mat_mul(scale, &phi.t(), &xi, 1.0, &mut v);
            start += rows;
        }
    }
    Ok(EmpiricalEstimate {
        u: FeatureCovariance {
            u,
            provenance: Provenance::Empirical,
            clock: *clock,
        },
        v: NoiseCovariance {
            v,
            provenance: Provenance::Empirical,
            clock: *clock,
        },
        warnings,
    })
}

/// `WWᵀ/N`.
pub fn gram_wwt(w: &Array2<f64>) -> Array2<f64> {
    let p = w.nrows();
    let mut g = Array2::<f64>::zeros((p, p));
    let wt = w.t().as_standard_layout().to_owned();
    syrk_ata_add(&mut g, &wt.view(), 1.0 / w.ncols() as f64);
    g
}

/// Adds `scale·(a aᵀ) ⊙ G` to `out`.
fn add_weighted_hadamard(out: &mut Array2<f64>, g: &Array2<f64>, a: &Array1<f64>, scale: f64) {
    Zip::indexed(out).and(g).for_each(|(i, j), o, &gij| *o += scale * a[i] * a[j] * gij);
}

/// Rows `G_ν` of the surrogate features for the class-`c` samples in `x`.
fn surrogate_rows<R: Rng + ?Sized>(
    x: &Array2<f64>,
    centroid: ndarray::ArrayView1<f64>,
    w: &Array2<f64>,
    coeffs: &GepCoefficients,
    c: usize,
    rng: &mut R,
) -> Array2<f64> {
    let k = &coeffs.classes[c];
    let sqrt_n = (w.ncols() as f64).sqrt();
    let centered = x - &centroid;
    let mut g = centered.dot(&w.t()) / sqrt_n;
    let lin = k.gamma_tilde.mapv(|gt| gt * coeffs.clock.decay() / k.gamma_sq.sqrt());
    let noise_sd = k.h2.mapv(f64::sqrt);
    for mut row in g.rows_mut() {
        Zip::from(&mut row)
            .and(&k.alpha)
            .and(&lin)
            .and(&noise_sd)
            .for_each(|v, &a, &l, &h| *v = a + l * *v + h * rng.sample::<f64, _>(StandardNormal));
    }
    g
}

/// Gaussian-equivalent `U` built from the training samples with fresh GEP noise.
pub fn gep_u<R: Rng + ?Sized>(
    dataset: &Dataset,
    w: &Array2<f64>,
    spec: &MixtureSpec,
    centroids: &Array2<f64>,
    coeffs: &GepCoefficients,
    rng: &mut R,
) -> Result<FeatureCovariance> {
    check_w(w, dataset.dim())?;
    let p = w.nrows();
    if coeffs.n_features() != p || coeffs.classes.len() != spec.n_classes() {
        return Err(Error::DimensionMismatch("coefficients do not match W and spec".into()));
    }
    let clock = coeffs.clock;
    let wwt = gram_wwt(w);
    let mut u = Array2::<f64>::zeros((p, p));
    for c in 0..spec.n_classes() {
        let b = spec.weights[c];
        let k = &coeffs.classes[c];
        let idx = &dataset.class_indices[c];
        if !idx.is_empty() {
            for chunk in idx.chunks(CHUNK_ROWS) {
                let x = dataset.samples.select(Axis(0), chunk);
                let g = surrogate_rows(&x, centroids.row(c), w, coeffs, c, rng);
                syrk_ata_add(&mut u, &g.view(), b / idx.len() as f64);
            }
        } else if b > 0.0 {
            log::warn!("class {c} has no samples; only its dataset-independent terms enter U_gep");
        }
        add_weighted_hadamard(&mut u, &wwt, &k.gamma_tilde, b * clock.delta() / k.gamma_sq);
        for i in 0..p {
            u[[i, i]] += b * k.varsigma[i];
        }
    }
    symmetrize(&mut u);
    Ok(FeatureCovariance {
        u,
        provenance: Provenance::Gep,
        clock,
    })
}

/// Per-class population block `Ũ_c`.
pub fn population_u_class(w: &Array2<f64>, coeffs: &GepCoefficients, c: usize) -> Array2<f64> {
    population_u_class_with_gram(&gram_wwt(w), coeffs, c)
}

fn population_u_class_with_gram(wwt: &Array2<f64>, coeffs: &GepCoefficients, c: usize) -> Array2<f64> {
    let k = &coeffs.classes[c];
    let p = wwt.nrows();
    let mut u = Array2::<f64>::zeros((p, p));
    add_weighted_hadamard(&mut u, wwt, &k.gamma_tilde, 1.0);
    Zip::indexed(&mut u).for_each(|(i, j), v| *v += k.alpha[i] * k.alpha[j]);
    for i in 0..p {
        u[[i, i]] += k.beta_tilde[i] - k.alpha[i].powi(2) - k.gamma_tilde[i].powi(2);
    }
    u
}

/// All per-class population blocks, sharing one `WWᵀ/N`.
pub fn population_u_blocks(w: &Array2<f64>, coeffs: &GepCoefficients) -> Vec<Array2<f64>> {
    let wwt = gram_wwt(w);
    (0..coeffs.classes.len())
        .map(|c| population_u_class_with_gram(&wwt, coeffs, c))
        .collect()
}

/// Population `Ũ = Σ_c b_c Ũ_c`.
pub fn population_u(w: &Array2<f64>, weights: &[f64], coeffs: &GepCoefficients) -> FeatureCovariance {
    let blocks = population_u_blocks(w, coeffs);
    let p = w.nrows();
    let mut u = Array2::<f64>::zeros((p, p));
    for (b, blk) in weights.iter().zip(&blocks) {
        u.scaled_add(*b, blk);
    }
    FeatureCovariance {
        u,
        provenance: Provenance::Population,
        clock: coeffs.clock,
    }
}

/// `V = Σ_c b_c √(Δ/N) (γ̃_c/Γ_c) ⊙ W`, row-scaled.
pub fn gep_v(w: &Array2<f64>, weights: &[f64], coeffs: &GepCoefficients) -> NoiseCovariance {
    let root = (coeffs.clock.delta() / w.ncols() as f64).sqrt();
    let mut row_scale = Array1::<f64>::zeros(w.nrows());
    for (b, k) in weights.iter().zip(&coeffs.classes) {
        row_scale.scaled_add(b * root / k.gamma_sq.sqrt(), &k.gamma_tilde);
    }
    let v = w * &row_scale.insert_axis(Axis(1));
    NoiseCovariance {
        v,
        provenance: Provenance::Gep,
        clock: coeffs.clock,
    }
}

/// Large-time expansion `γ²WWᵀ/N + (β̃ − γ²)I + γ²e^{−2t}Σ_c b_c μ_cμ_cᵀ`
/// with the global scalars `γ = E[zφ(z)]`, `β̃ = E[φ²(z)]`.
pub fn largetime_u(
    w: &Array2<f64>,
    spec: &MixtureSpec,
    centroids: &Array2<f64>,
    clock: &DiffusionClock,
    global_gamma: f64,
    global_beta_tilde: f64,
) -> Result<FeatureCovariance> {
    check_w(w, spec.dim)?;
    let p = w.nrows();
    let g2 = global_gamma * global_gamma;
    let mut u = gram_wwt(w) * g2;
    for i in 0..p {
        u[[i, i]] += global_beta_tilde - g2;
    }
    let mu = centroids.dot(&w.t()) / (spec.dim as f64).sqrt();
    let decay2 = (-2.0 * clock.t()).exp();
    let weighted = Array2::from_shape_fn(mu.dim(), |(c, i)| mu[[c, i]] * (spec.weights[c] * g2 * decay2).sqrt());
    syrk_ata_add(&mut u, &weighted.view(), 1.0);
    Ok(FeatureCovariance {
        u,
        provenance: Provenance::LargeTime,
        clock: *clock,
    })
}

/// Memorization part `δU = U_gep − Ũ` and its Frobenius norm.
#[derive(Debug, Clone)]
pub struct GenMemSplit {
    pub delta_u: Array2<f64>,
    pub frobenius: f64,
    /// `‖δU‖_F / (χ_p/√χ_m)`.
    pub scaled: f64,
}

pub fn split_gen_mem(u_gep: &Array2<f64>, population: &Array2<f64>, chi_p: f64, chi_m: f64) -> GenMemSplit {
    let delta_u = u_gep - population;
    let frobenius = frobenius(&delta_u.view());
    GenMemSplit {
        scaled: frobenius / (chi_p / chi_m.sqrt()),
        delta_u,
        frobenius,
    }
}

pub fn frobenius(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

const DUMP_MAGIC: &[u8; 8] = b"RFSCOV01";

fn write_header<W: Write>(out: &mut W, rows: u64, cols: u64, tag: &str, t: f64) -> Result<()> {
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&rows.to_le_bytes())?;
    out.write_all(&cols.to_le_bytes())?;
    let tag_bytes = tag.as_bytes();
    out.write_all(&(tag_bytes.len() as u64).to_le_bytes())?;
    out.write_all(tag_bytes)?;
    out.write_all(&t.to_le_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    input.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
}

fn write_f64s<W: Write>(out: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Header of a binary matrix dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpHeader {
    pub rows: usize,
    pub cols: usize,
    pub provenance: Provenance,
    pub t: f64,
}

fn read_header<R: Read>(input: &mut R) -> Result<DumpHeader> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Dump("bad magic".into()));
    }
    let rows = read_u64(input)? as usize;
    let cols = read_u64(input)? as usize;
    let tag_len = read_u64(input)? as usize;
    if tag_len > 64 {
        return Err(Error::Dump(format!("tag length {tag_len}")));
    }
    let mut tag = vec![0u8; tag_len];
    input.read_exact(&mut tag)?;
    let tag = String::from_utf8(tag).map_err(|e| Error::Dump(e.to_string()))?;
    let t = read_f64s(input, 1)?[0];
    Ok(DumpHeader {
        rows,
        cols,
        provenance: Provenance::from_tag(&tag)?,
        t,
    })
}

/// Writes a matrix row-major as little-endian `f64` after the header.
pub fn dump_matrix<P: AsRef<Path>>(path: P, m: &ArrayView2<f64>, provenance: Provenance, t: f64) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut out, m.nrows() as u64, m.ncols() as u64, provenance.tag(), t)?;
    write_f64s(&mut out, m.iter().cloned())?;
    out.flush()?;
    Ok(())
}

pub fn load_matrix<P: AsRef<Path>>(path: P) -> Result<(DumpHeader, Array2<f64>)> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let header = read_header(&mut input)?;
    let data = read_f64s(&mut input, header.rows * header.cols)?;
    let m = Array2::from_shape_vec((header.rows, header.cols), data).map_err(|e| Error::Dump(e.to_string()))?;
    Ok((header, m))
}

/// Writes eigenvalues followed by the eigenvector matrix (columns are vectors).
pub fn dump_eigen<P: AsRef<Path>>(path: P, eig: &SymEigen, provenance: Provenance, t: f64) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut out, eig.vectors.nrows() as u64, eig.vectors.ncols() as u64, provenance.tag(), t)?;
    write_f64s(&mut out, eig.values.iter().cloned())?;
    write_f64s(&mut out, eig.vectors.iter().cloned())?;
    out.flush()?;
    Ok(())
}

pub fn load_eigen<P: AsRef<Path>>(path: P) -> Result<(DumpHeader, SymEigen)> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let header = read_header(&mut input)?;
    let values = read_f64s(&mut input, header.cols)?;
    let vectors = read_f64s(&mut input, header.rows * header.cols)?;
    let vectors = Array2::from_shape_vec((header.rows, header.cols), vectors).map_err(|e| Error::Dump(e.to_string()))?;
    Ok((
        header,
        SymEigen {
            values: Array1::from(values),
            vectors,
        },
    ))
}

/// Smallest eigenvalue relative to the largest magnitude; PSD matrices give
/// values above about `−1e-8`.
pub fn relative_min_eigenvalue(values: &Array1<f64>) -> f64 {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    values.iter().cloned().fold(f64::INFINITY, f64::min) / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gep::{coeffs_vector, global_scalars};
    use crate::gmm::{realize_centroids, sample_dataset};
    use crate::linalg::{sym_eigh, sym_eigvals};
    use crate::quadrature::QuadratureRule;
    use crate::seed::rng_from;
    use approx::assert_abs_diff_eq;
    use rand_distr::Distribution;

    fn gaussian_w(p: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed);
        Array2::from_shape_fn((p, n), |_| StandardNormal.sample(&mut rng))
    }

    fn rule() -> QuadratureRule {
        QuadratureRule::new(60).unwrap()
    }

    fn setup(n: usize, p: usize, m: usize, t: f64, seed: u64) -> (MixtureSpec, Array2<f64>, Dataset, Array2<f64>, DiffusionClock) {
        let spec = MixtureSpec::orthogonal(n, vec![0.5, 0.5], vec![0.5, 0.25], &[1.0, 1.0]).unwrap();
        let mut rng = rng_from(seed);
        let cen = realize_centroids(&spec, &mut rng).unwrap();
        let data = sample_dataset(&spec, &cen, m, &mut rng).unwrap();
        (spec, cen, data, gaussian_w(p, n, seed + 1), DiffusionClock::new(t).unwrap())
    }

    #[test]
    fn identity_single_sample_zero_time() {
        let spec = MixtureSpec::centered(4, vec![1.0], vec![1.0]).unwrap();
        let cen = Array2::zeros((1, 4));
        let data = sample_dataset(&spec, &cen, 1, &mut rng_from(1)).unwrap();
        let w = gaussian_w(3, 4, 2);
        let clock = DiffusionClock::new(0.0).unwrap();
        let est = empirical_uv(&data, &w, &[1.0], &clock, Activation::Identity, 5, &mut rng_from(3)).unwrap();
        let wx = w.dot(&data.samples.row(0));
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(est.u.u[[i, j]], wx[i] * wx[j] / 4.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn empirical_diagonal_matches_beta_tilde() {
        let (spec, cen, data, w, clock) = setup(60, 40, 300, 0.05, 10);
        let est = empirical_uv(&data, &w, &spec.weights, &clock, Activation::Tanh, 50, &mut rng_from(4)).unwrap();
        let k = coeffs_vector(&w, &spec, &cen, &clock, Activation::Tanh, &rule()).unwrap();
        let diag_mean = est.u.u.diag().mean().unwrap();
        let bt: f64 = (0..2).map(|c| spec.weights[c] * k.classes[c].beta_tilde.mean().unwrap()).sum();
        // The empirical mean is over finitely many samples per class; the
        // quadrature value is the expectation over them.
        assert!((diag_mean - bt).abs() < 0.02, "{diag_mean} vs {bt}");
    }

    #[test]
    fn empirical_v_matches_gep_v() {
        let (spec, cen, data, w, clock) = setup(100, 200, 1000, 0.1, 20);
        let est = empirical_uv(&data, &w, &spec.weights, &clock, Activation::Tanh, 20, &mut rng_from(5)).unwrap();
        let k = coeffs_vector(&w, &spec, &cen, &clock, Activation::Tanh, &rule()).unwrap();
        let v = gep_v(&w, &spec.weights, &k);
        let diff = &est.v.v - &v.v;
        // Each entry is an average of 20000 products of O(1) terms.
        let se = 1.0 / (20_000f64).sqrt();
        let frac_within: f64 = diff.iter().filter(|d| d.abs() < 3.0 * se).count() as f64 / diff.len() as f64;
        assert!(frac_within > 0.98, "{frac_within}");
    }

    #[test]
    fn gep_v_zero_time_and_identity() {
        let spec = MixtureSpec::centered(10, vec![1.0], vec![0.5]).unwrap();
        let w = gaussian_w(6, 10, 1);
        let cen = Array2::zeros((1, 10));
        let k0 = coeffs_vector(&w, &spec, &cen, &DiffusionClock::new(0.0).unwrap(), Activation::Tanh, &rule()).unwrap();
        assert!(gep_v(&w, &[1.0], &k0).v.iter().all(|&v| v == 0.0));
        let clock = DiffusionClock::new(0.2).unwrap();
        let k = coeffs_vector(&w, &spec, &cen, &clock, Activation::Identity, &rule()).unwrap();
        let v = gep_v(&w, &[1.0], &k);
        let expect = &w * ((clock.delta() / 10.0).sqrt());
        for (a, b) in v.v.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn gep_u_with_vanishing_variance() {
        let spec = MixtureSpec::orthogonal(8, vec![1.0], vec![1e-12], &[1.0]).unwrap();
        let mut rng = rng_from(6);
        let cen = realize_centroids(&spec, &mut rng).unwrap();
        let data = sample_dataset(&spec, &cen, 50, &mut rng).unwrap();
        let w = gaussian_w(5, 8, 7);
        let clock = DiffusionClock::new(0.0).unwrap();
        let k = coeffs_vector(&w, &spec, &cen, &clock, Activation::Tanh, &rule()).unwrap();
        let u = gep_u(&data, &w, &spec, &cen, &k, &mut rng).unwrap();
        let a = &k.classes[0].alpha;
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!(u.u[[i, j]], a[i] * a[j], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn centered_population_is_classic_gep() {
        let spec = MixtureSpec::centered(20, vec![1.0], vec![0.5]).unwrap();
        let w = gaussian_w(15, 20, 8);
        let k = coeffs_vector(&w, &spec, &Array2::zeros((1, 20)), &DiffusionClock::new(0.1).unwrap(), Activation::Tanh, &rule()).unwrap();
        let u = population_u(&w, &[1.0], &k).u;
        let (g, bt) = (k.classes[0].gamma_tilde[0], k.classes[0].beta_tilde[0]);
        let expect = gram_wwt(&w) * (g * g) + Array2::<f64>::eye(15) * (bt - g * g);
        for (a, b) in u.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn gep_u_average_matches_population() {
        let (spec, cen, _, w, clock) = setup(30, 12, 200, 0.05, 30);
        let k = coeffs_vector(&w, &spec, &cen, &clock, Activation::Tanh, &rule()).unwrap();
        let pop = population_u(&w, &spec.weights, &k).u;
        let reps = 50;
        let mut sum = Array2::<f64>::zeros((12, 12));
        let mut sumsq = Array2::<f64>::zeros((12, 12));
        let mut rng = rng_from(31);
        for _ in 0..reps {
            let data = sample_dataset(&spec, &cen, 200, &mut rng).unwrap();
            let u = gep_u(&data, &w, &spec, &cen, &k, &mut rng).unwrap().u;
            sumsq += &u.mapv(|v| v * v);
            sum += &u;
        }
        let mean = &sum / reps as f64;
        let var = &sumsq / reps as f64 - &mean.mapv(|v| v * v);
        let mut within = 0;
        for ((m, v), p) in mean.iter().zip(var.iter()).zip(pop.iter()) {
            let se = (v.max(0.0) / reps as f64).sqrt().max(1e-12);
            if (m - p).abs() <= 3.0 * se {
                within += 1;
            }
        }
        assert!(within as f64 / 144.0 > 0.97, "{within}/144");
    }

    #[test]
    fn largetime_close_to_gep_population_at_large_t() {
        let (spec, cen, data, w, _) = setup(40, 30, 200, 0.0, 40);
        let clock = DiffusionClock::new(10.0).unwrap();
        let r = rule();
        let k = coeffs_vector(&w, &spec, &cen, &clock, Activation::Tanh, &r).unwrap();
        let (g, bt) = global_scalars(Activation::Tanh, &r);
        let lt = largetime_u(&w, &spec, &cen, &clock, g, bt).unwrap().u;
        let gu = gep_u(&data, &w, &spec, &cen, &k, &mut rng_from(41)).unwrap().u;
        let rel = frobenius(&(&lt - &gu).view()) / frobenius(&gu.view());
        assert!(rel < 1e-3, "{rel}");
    }

    #[test]
    fn matrices_are_psd() {
        let (spec, cen, data, w, clock) = setup(30, 60, 100, 0.01, 50);
        let k = coeffs_vector(&w, &spec, &cen, &clock, Activation::Tanh, &rule()).unwrap();
        let gu = gep_u(&data, &w, &spec, &cen, &k, &mut rng_from(51)).unwrap().u;
        let pu = population_u(&w, &spec.weights, &k).u;
        let eu = empirical_uv(&data, &w, &spec.weights, &clock, Activation::Tanh, 5, &mut rng_from(52)).unwrap().u.u;
        for m in [gu, pu, eu] {
            let vals = sym_eigvals(&m.view()).unwrap();
            assert!(relative_min_eigenvalue(&vals) > -1e-8);
        }
    }

    #[test]
    fn split_of_identical_is_zero() {
        let a = Array2::<f64>::eye(3);
        let s = split_gen_mem(&a, &a, 2.0, 4.0);
        assert_eq!(s.frobenius, 0.0);
    }

    #[test]
    fn class_weight_linearity() {
        let (spec, cen, _, w, clock) = setup(20, 10, 100, 0.1, 60);
        let k = coeffs_vector(&w, &spec, &cen, &clock, Activation::Tanh, &rule()).unwrap();
        let blocks = population_u_blocks(&w, &k);
        let u = population_u(&w, &[1.0, 0.0], &k).u;
        assert_eq!(u, blocks[0]);
        let mix = population_u(&w, &[0.3, 0.7], &k).u;
        let expect = &blocks[0] * 0.3 + &blocks[1] * 0.7;
        for (a, b) in mix.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn dump_roundtrip() {
        let dir = std::env::temp_dir().join(format!("rfscore-dump-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let m = Array2::from_shape_fn((3, 4), |(i, j)| i as f64 * 0.5 - j as f64);
        dump_matrix(dir.join("m.bin"), &m.view(), Provenance::Gep, 0.01).unwrap();
        let (h, back) = load_matrix(dir.join("m.bin")).unwrap();
        assert_eq!(back, m);
        assert_eq!(h.provenance, Provenance::Gep);
        assert_eq!(h.t, 0.01);
        let sym = m.t().dot(&m);
        let e = sym_eigh(&sym.view()).unwrap();
        dump_eigen(dir.join("e.bin"), &e, Provenance::Empirical, 0.5).unwrap();
        let (_, e2) = load_eigen(dir.join("e.bin")).unwrap();
        assert_eq!(e2.values, e.values);
        assert_eq!(e2.vectors, e.vectors);
        std::fs::remove_dir_all(dir).ok();
    }
}
