//! Gaussian-equivalent (Hermite) coefficients of the random features.
//!
//! For class `c` at diffusion time `t` the pre-activation of neuron `p` is
//! Gaussian with mean `e^{−t}μ_c⁽ᵖ⁾` and variance `Γ_c²`, where
//! `μ_c = W m_c/√N`. The coefficients are
//!
//! * `α = E[φ(Γz + e^{−t}μ)]`, `β̃ = E[φ²(Γz + e^{−t}μ)]`, `γ̃ = E[zφ(Γz + e^{−t}μ)]`;
//! * `β = E[φ(Γu + e^{−t}μ)φ(Γv + e^{−t}μ)]` with `corr(u, v) = σ²e^{−2t}/Γ²`;
//! * `γ = (σe^{−t}/Γ)γ̃`, `ς = β̃ − β − Δγ̃²/Γ²`, `h² = β − α² − γ²`.
//!
//! The centered scalars use the same definitions with `μ = 0`, so the two
//! forms agree entry by entry.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::gmm::{DiffusionClock, MixtureSpec};
use crate::quadrature::QuadratureRule;

/// Negative `ς` or `h²` above this magnitude are roundoff and clamped to 0.
pub const CLAMP_TOL: f64 = 1e-10;

/// Coefficients of one class, entrywise over the `P` neurons.
#[derive(Debug, Clone)]
pub struct ClassCoefficients {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    pub beta_tilde: Array1<f64>,
    pub gamma: Array1<f64>,
    pub gamma_tilde: Array1<f64>,
    pub varsigma: Array1<f64>,
    pub h2: Array1<f64>,
    /// Projected centroid `W m_c/√N`.
    pub mu: Array1<f64>,
    /// `Γ_c²`.
    pub gamma_sq: f64,
}

#[derive(Debug, Clone)]
pub struct GepCoefficients {
    pub classes: Vec<ClassCoefficients>,
    pub clock: DiffusionClock,
    /// Number of entries of `ς` or `h²` clamped from roundoff negatives.
    pub clamp_count: usize,
}

impl GepCoefficients {
    pub fn n_features(&self) -> usize {
        self.classes.first().map_or(0, |c| c.alpha.len())
    }
}

/// Centered-limit coefficients of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarClass {
    pub beta_tilde: f64,
    pub beta: f64,
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub varsigma: f64,
    pub h2: f64,
    pub gamma_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarCoefficients {
    pub classes: Vec<ScalarClass>,
    pub t: f64,
    pub clamp_count: usize,
}

impl ScalarCoefficients {
    /// `Σ_c b_c Δγ̃_c²/Γ_c²`, the constant in the conjugate resolvent equation.
    pub fn kappa(&self, weights: &[f64]) -> f64 {
        let delta = DiffusionClock::new(self.t).map(|c| c.delta()).unwrap_or(0.0);
        self.classes
            .iter()
            .zip(weights)
            .map(|(k, b)| b * delta * k.gamma_tilde.powi(2) / k.gamma_sq)
            .sum()
    }
}

fn require_odd(activation: Activation) -> Result<()> {
    if activation.is_odd() {
        Ok(())
    } else {
        Err(Error::NonOddActivation(activation.name().to_string()))
    }
}

#[derive(Clone, Copy)]
struct Entry {
    alpha: f64,
    beta: f64,
    beta_tilde: f64,
    gamma_tilde: f64,
}

fn entry(activation: Activation, rule: &QuadratureRule, mean: f64, gamma: f64, corr: f64) -> Result<Entry> {
    let f = |x: f64| activation.eval(x);
    let alpha = rule.expect_1d(f, mean, gamma);
    let beta_tilde = rule.expect_1d(|x| f(x).powi(2), mean, gamma);
    let gamma_tilde = rule.expect_1d(|z| z * f(mean + gamma * z), 0.0, 1.0);
    let beta = rule.expect_2d_correlated(|u, v| f(gamma * u + mean) * f(gamma * v + mean), corr)?;
    Ok(Entry {
        alpha,
        beta,
        beta_tilde,
        gamma_tilde,
    })
}

fn clamp(value: f64, what: &str, count: &mut usize) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -CLAMP_TOL {
        *count += 1;
        Ok(0.0)
    } else {
        Err(Error::InvalidArgument(format!("{what} = {value:e} is negative beyond roundoff")))
    }
}

/// Per-class correlation `σ²e^{−2t}/Γ²` and the `γ/γ̃` ratio `σe^{−t}/Γ`.
fn class_geometry(clock: &DiffusionClock, variance: f64) -> (f64, f64, f64) {
    let g2 = clock.gamma_sq(variance);
    let signal = variance * (-2.0 * clock.t()).exp();
    (g2, signal / g2, signal.sqrt() / g2.sqrt())
}

/// Entrywise coefficients for every class given `W` (`P×N`) and centroids (`C×N`).
pub fn coeffs_vector(
    w: &Array2<f64>,
    spec: &MixtureSpec,
    centroids: &Array2<f64>,
    clock: &DiffusionClock,
    activation: Activation,
    rule: &QuadratureRule,
) -> Result<GepCoefficients> {
    require_odd(activation)?;
    if w.ncols() != spec.dim || centroids.dim() != (spec.n_classes(), spec.dim) {
        return Err(Error::DimensionMismatch(format!(
            "W {:?}, centroids {:?}, spec dimension {} with {} classes",
            w.dim(),
            centroids.dim(),
            spec.dim,
            spec.n_classes()
        )));
    }
    let sqrt_n = (spec.dim as f64).sqrt();
    let decay = clock.decay();
    let delta = clock.delta();
    let mut clamp_count = 0;
    let mut classes = Vec::with_capacity(spec.n_classes());
    for c in 0..spec.n_classes() {
        let (g2, corr, ratio) = class_geometry(clock, spec.variances[c]);
        let gamma = g2.sqrt();
        let mu: Array1<f64> = w.dot(&centroids.row(c)) / sqrt_n;
        let centered = mu.iter().all(|&m| m == 0.0);
        let entries: Vec<Entry> = if centered {
            vec![entry(activation, rule, 0.0, gamma, corr)?; mu.len()]
        } else {
            mu.as_slice()
                .expect("contiguous")
                .par_iter()
                .map(|&m| entry(activation, rule, decay * m, gamma, corr))
                .collect::<Result<_>>()?
        };
        let p = entries.len();
        let mut k = ClassCoefficients {
            alpha: Array1::zeros(p),
            beta: Array1::zeros(p),
            beta_tilde: Array1::zeros(p),
            gamma: Array1::zeros(p),
            gamma_tilde: Array1::zeros(p),
            varsigma: Array1::zeros(p),
            h2: Array1::zeros(p),
            mu,
            gamma_sq: g2,
        };
        for (i, e) in entries.iter().enumerate() {
            let gam = ratio * e.gamma_tilde;
            k.alpha[i] = e.alpha;
            k.beta[i] = e.beta;
            k.beta_tilde[i] = e.beta_tilde;
            k.gamma_tilde[i] = e.gamma_tilde;
            k.gamma[i] = gam;
            k.varsigma[i] = clamp(e.beta_tilde - e.beta - delta * e.gamma_tilde.powi(2) / g2, "varsigma", &mut clamp_count)?;
            k.h2[i] = clamp(e.beta - e.alpha.powi(2) - gam * gam, "h2", &mut clamp_count)?;
        }
        classes.push(k);
    }
    if clamp_count > 0 {
        log::debug!("clamped {clamp_count} roundoff-negative coefficients");
    }
    Ok(GepCoefficients {
        classes,
        clock: *clock,
        clamp_count,
    })
}

/// Centered-limit scalars per class.
pub fn coeffs_scalar(
    spec: &MixtureSpec,
    clock: &DiffusionClock,
    activation: Activation,
    rule: &QuadratureRule,
) -> Result<ScalarCoefficients> {
    require_odd(activation)?;
    let delta = clock.delta();
    let mut clamp_count = 0;
    let mut classes = Vec::with_capacity(spec.n_classes());
    for &variance in &spec.variances {
        let (g2, corr, ratio) = class_geometry(clock, variance);
        let e = entry(activation, rule, 0.0, g2.sqrt(), corr)?;
        let gamma = ratio * e.gamma_tilde;
        classes.push(ScalarClass {
            beta_tilde: e.beta_tilde,
            beta: e.beta,
            gamma,
            gamma_tilde: e.gamma_tilde,
            varsigma: clamp(e.beta_tilde - e.beta - delta * e.gamma_tilde.powi(2) / g2, "varsigma", &mut clamp_count)?,
            h2: clamp(e.beta - gamma * gamma, "h2", &mut clamp_count)?,
            gamma_sq: g2,
        });
    }
    Ok(ScalarCoefficients {
        classes,
        t: clock.t(),
        clamp_count,
    })
}

/// Global large-time scalars `(γ, β̃) = (E[zφ(z)], E[φ²(z)])`.
pub fn global_scalars(activation: Activation, rule: &QuadratureRule) -> (f64, f64) {
    let f = |x: f64| activation.eval(x);
    (rule.expect_1d(|z| z * f(z), 0.0, 1.0), rule.expect_1d(|z| f(z).powi(2), 0.0, 1.0))
}

/// Memoizes [`coeffs_vector`] by a content hash of its inputs.
#[derive(Debug, Default)]
pub struct CoefficientCache {
    entries: Mutex<HashMap<u64, Arc<GepCoefficients>>>,
}

fn hash_f64s<'a, H: Hasher>(values: impl Iterator<Item = &'a f64>, h: &mut H) {
    for v in values {
        v.to_bits().hash(h);
    }
}

impl CoefficientCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(
        w: &Array2<f64>,
        spec: &MixtureSpec,
        centroids: &Array2<f64>,
        clock: &DiffusionClock,
        activation: Activation,
        rule: &QuadratureRule,
    ) -> u64 {
        let mut h = DefaultHasher::new();
        w.dim().hash(&mut h);
        hash_f64s(w.iter(), &mut h);
        centroids.dim().hash(&mut h);
        hash_f64s(centroids.iter(), &mut h);
        spec.dim.hash(&mut h);
        hash_f64s(spec.weights.iter(), &mut h);
        hash_f64s(spec.variances.iter(), &mut h);
        clock.t().to_bits().hash(&mut h);
        activation.hash(&mut h);
        rule.order().hash(&mut h);
        h.finish()
    }

    pub fn get_or_compute(
        &self,
        w: &Array2<f64>,
        spec: &MixtureSpec,
        centroids: &Array2<f64>,
        clock: &DiffusionClock,
        activation: Activation,
        rule: &QuadratureRule,
    ) -> Result<Arc<GepCoefficients>> {
        let key = Self::key(w, spec, centroids, clock, activation, rule);
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let fresh = Arc::new(coeffs_vector(w, spec, centroids, clock, activation, rule)?);
        Ok(Arc::clone(self.entries.lock().expect("cache lock").entry(key).or_insert(fresh)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::realize_centroids;
    use crate::quadrature::{hermite_he, DEFAULT_ORDER};
    use crate::seed::rng_from;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn rule() -> QuadratureRule {
        QuadratureRule::new(DEFAULT_ORDER).unwrap()
    }

    fn gaussian_w(p: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed);
        Array2::from_shape_fn((p, n), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identity_activation_closed_forms() {
        let spec = MixtureSpec::orthogonal(20, vec![0.4, 0.6], vec![0.5, 0.25], &[1.0, 2.0]).unwrap();
        let m = realize_centroids(&spec, &mut rng_from(1)).unwrap();
        let w = gaussian_w(15, 20, 2);
        let clock = DiffusionClock::new(0.3).unwrap();
        let k = coeffs_vector(&w, &spec, &m, &clock, Activation::Identity, &rule()).unwrap();
        for (c, cls) in k.classes.iter().enumerate() {
            let expect = spec.variances[c].sqrt() * clock.decay();
            for p in 0..15 {
                assert_abs_diff_eq!(cls.gamma[p], expect, epsilon = 1e-12);
                assert_abs_diff_eq!(cls.alpha[p], clock.decay() * cls.mu[p], epsilon = 1e-12);
                assert_abs_diff_eq!(cls.h2[p], 0.0, epsilon = 1e-12);
                assert_abs_diff_eq!(cls.varsigma[p], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn odd_activation_zero_mean_has_no_alpha() {
        let spec = MixtureSpec::centered(10, vec![1.0], vec![0.5]).unwrap();
        let w = gaussian_w(8, 10, 3);
        let clock = DiffusionClock::new(0.05).unwrap();
        let k = coeffs_vector(&w, &spec, &Array2::zeros((1, 10)), &clock, Activation::Tanh, &rule()).unwrap();
        assert!(k.classes[0].alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn large_time_limits() {
        let spec = MixtureSpec::orthogonal(30, vec![0.5, 0.5], vec![0.5, 0.25], &[1.0, 1.0]).unwrap();
        let m = realize_centroids(&spec, &mut rng_from(4)).unwrap();
        let w = gaussian_w(12, 30, 5);
        let r = rule();
        let (g, bt) = global_scalars(Activation::Tanh, &r);
        let clock = DiffusionClock::new(10.0).unwrap();
        let k = coeffs_vector(&w, &spec, &m, &clock, Activation::Tanh, &r).unwrap();
        for cls in &k.classes {
            for p in 0..12 {
                assert_abs_diff_eq!(cls.gamma_tilde[p], g, epsilon = 1e-8);
                assert_abs_diff_eq!(cls.beta_tilde[p], bt, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn scalar_matches_vector_with_zero_centroids() {
        let spec = MixtureSpec::centered(10, vec![0.5, 0.5], vec![0.5, 0.25]).unwrap();
        let w = gaussian_w(5, 10, 6);
        let r = rule();
        for &t in &[0.0, 0.001, 0.01, 0.3, 2.0] {
            let clock = DiffusionClock::new(t).unwrap();
            let v = coeffs_vector(&w, &spec, &Array2::zeros((2, 10)), &clock, Activation::Tanh, &r).unwrap();
            let s = coeffs_scalar(&spec, &clock, Activation::Tanh, &r).unwrap();
            for c in 0..2 {
                let (vc, sc) = (&v.classes[c], &s.classes[c]);
                for p in 0..5 {
                    assert_abs_diff_eq!(vc.beta_tilde[p], sc.beta_tilde, epsilon = 1e-10);
                    assert_abs_diff_eq!(vc.beta[p], sc.beta, epsilon = 1e-10);
                    assert_abs_diff_eq!(vc.gamma[p], sc.gamma, epsilon = 1e-10);
                    assert_abs_diff_eq!(vc.varsigma[p], sc.varsigma, epsilon = 1e-10);
                    assert_abs_diff_eq!(vc.h2[p], sc.h2, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_time_varsigma() {
        let spec = MixtureSpec::centered(4, vec![1.0], vec![0.7]).unwrap();
        let s = coeffs_scalar(&spec, &DiffusionClock::new(0.0).unwrap(), Activation::Tanh, &rule()).unwrap();
        let k = s.classes[0];
        // At t = 0 the two arguments of β coincide, so β = β̃ and ς = 0.
        assert_abs_diff_eq!(k.varsigma, k.beta_tilde - k.beta, epsilon = 1e-14);
        assert_abs_diff_eq!(k.varsigma, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nonnegative_over_grid() {
        let r = rule();
        for i in 0..20 {
            for j in 0..20 {
                let var = 0.05 + 2.0 * i as f64 / 19.0;
                let t = 1e-4 * 10f64.powf(5.0 * j as f64 / 19.0);
                let spec = MixtureSpec::centered(4, vec![1.0], vec![var]).unwrap();
                let s = coeffs_scalar(&spec, &DiffusionClock::new(t).unwrap(), Activation::Tanh, &r).unwrap();
                let k = s.classes[0];
                assert!(k.h2 >= 0.0 && k.varsigma >= 0.0);
                assert!(k.beta_tilde >= k.beta - 1e-12);
                assert!(k.beta >= k.gamma * k.gamma - 1e-12);
            }
        }
    }

    #[test]
    fn beta_matches_mehler_series() {
        let r = rule();
        let (var, t) = (0.5, 0.01);
        let clock = DiffusionClock::new(t).unwrap();
        let spec = MixtureSpec::centered(4, vec![1.0], vec![var]).unwrap();
        let s = coeffs_scalar(&spec, &clock, Activation::Tanh, &r).unwrap().classes[0];
        let g = s.gamma_sq.sqrt();
        let corr = var * (-2.0 * t).exp() / s.gamma_sq;
        let mut series = 0.0;
        let mut fact = 1.0;
        for n in 0..30 {
            if n > 0 {
                fact *= n as f64;
            }
            let hn = r.expect_1d(|z| hermite_he(n, z) * (g * z).tanh(), 0.0, 1.0);
            series += corr.powi(n as i32) / fact * hn * hn;
        }
        // Truncation at 30 terms leaves corr^30-size tails of a fast-decaying series.
        assert_abs_diff_eq!(s.beta, series, epsilon = 1e-6);
    }

    #[test]
    fn rejects_non_odd() {
        let spec = MixtureSpec::centered(4, vec![1.0], vec![0.5]).unwrap();
        let err = coeffs_scalar(&spec, &DiffusionClock::new(0.1).unwrap(), Activation::Relu, &rule());
        assert!(matches!(err, Err(Error::NonOddActivation(_))));
    }

    #[test]
    fn cache_reuses_entries() {
        let spec = MixtureSpec::orthogonal(6, vec![0.5, 0.5], vec![0.5, 0.25], &[1.0, 1.0]).unwrap();
        let m = realize_centroids(&spec, &mut rng_from(7)).unwrap();
        let w = gaussian_w(4, 6, 8);
        let r = QuadratureRule::new(40).unwrap();
        let cache = CoefficientCache::new();
        let c1 = DiffusionClock::new(0.1).unwrap();
        let a = cache.get_or_compute(&w, &spec, &m, &c1, Activation::Tanh, &r).unwrap();
        let b = cache.get_or_compute(&w, &spec, &m, &c1, Activation::Tanh, &r).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        cache
            .get_or_compute(&w, &spec, &m, &DiffusionClock::new(0.2).unwrap(), Activation::Tanh, &r)
            .unwrap();
        assert_eq!(cache.len(), 2);
    }
}
