//! Train/test/score error curves evaluated in the eigenbasis of `U`.
//!
//! With `A(τ) = B diag(f(τ)) Ψᵀ`, any loss of the form
//! `c + (Δ/N)Tr(AÛAᵀ) + (2√Δ/N)Tr(V̂A)` is a quadratic form in the mode
//! factors `f`: `c + (Δ/N) fᵀHf + (2√Δ/N) fᵀd` with
//! `H = (BᵀB) ⊙ (ΨᵀÛΨ)` and `d_q = ψ_qᵀV̂ b_q`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::EvalMoments;
use super::readout::ReadoutPropagator;
use super::times::{extract_times, ClassTimes, TimeExtraction};
use super::gaussian_projection;
use crate::activation::Activation;
use crate::covariance::{empirical_uv, gep_u, population_u_blocks};
use crate::error::{Error, Result};
use crate::gep::{coeffs_vector, GepCoefficients};
use crate::gmm::{realize_centroids, sample_dataset, DiffusionClock, MixtureSpec};
use crate::linalg::{sym_eigh, SymEigen};
use crate::quadrature::QuadratureRule;

/// Eigenvalues below this fraction of the largest are left out of the
/// semi-analytical sums.
pub const SEMI_ANALYTIC_ZERO_CUT: f64 = 1e-14;

/// Re-exported for callers that only need the mode basis.
pub type ReadoutModes = ReadoutPropagator;

#[derive(Debug, Clone)]
enum Quad {
    Dense(Array2<f64>),
    Diagonal(Array1<f64>),
}

/// A loss written as a quadratic form in the mode factors.
#[derive(Debug, Clone)]
pub struct ModalLoss {
    quad: Quad,
    d: Array1<f64>,
    constant: f64,
    quad_scale: f64,
    lin_scale: f64,
}

impl ModalLoss {
    /// Loss on evaluation moments `(Û, V̂)` of readouts built from `modes`.
    ///
    /// The noise energy `E‖ξ‖²/N` enters with its exact value 1, so the loss
    /// of the zero readout is exactly 1.
    pub fn new(modes: &ReadoutPropagator, moments: &EvalMoments, clock: &DiffusionClock) -> Self {
        let psi = &modes.eig.vectors;
        let bt_b = modes.b.t().dot(&modes.b);
        let rotated = psi.t().dot(&moments.u).dot(psi);
        let psi_v = psi.t().dot(&moments.v);
        Self::assemble(Quad::Dense(bt_b * rotated), &psi_v, modes, 1.0, clock)
    }

    /// Loss on the matrices `(U, V)` that generated `modes`; `ΨᵀUΨ` is diagonal.
    pub fn on_generator(modes: &ReadoutPropagator, v: &Array2<f64>, clock: &DiffusionClock) -> Self {
        let norms = modes.b.map_axis(Axis(0), |col| col.dot(&col));
        let psi_v = modes.eig.vectors.t().dot(v);
        Self::assemble(Quad::Diagonal(norms * &modes.eig.values), &psi_v, modes, 1.0, clock)
    }

    fn assemble(quad: Quad, psi_v: &Array2<f64>, modes: &ReadoutPropagator, constant: f64, clock: &DiffusionClock) -> Self {
        let d = (psi_v * &modes.b.t()).sum_axis(Axis(1));
        let n = modes.b.nrows() as f64;
        let delta = clock.delta();
        Self {
            quad,
            d,
            constant,
            quad_scale: delta / n,
            lin_scale: 2.0 * delta.sqrt() / n,
        }
    }

    pub fn eval(&self, f: &Array1<f64>) -> f64 {
        let q = match &self.quad {
            Quad::Dense(h) => f.dot(&h.dot(f)),
            Quad::Diagonal(h) => (h * f * f).sum(),
        };
        self.constant + self.quad_scale * q + self.lin_scale * self.d.dot(f)
    }

    /// Loss for each column of `factors` (`P×T`).
    pub fn eval_many(&self, factors: &Array2<f64>) -> Vec<f64> {
        let quad: Array1<f64> = match &self.quad {
            Quad::Dense(h) => (h.dot(factors) * factors).sum_axis(Axis(0)),
            Quad::Diagonal(h) => (factors * factors * &h.view().insert_axis(Axis(1))).sum_axis(Axis(0)),
        };
        let lin = self.d.dot(factors);
        quad.iter()
            .zip(lin.iter())
            .map(|(q, l)| self.constant + self.quad_scale * q + self.lin_scale * l)
            .collect()
    }
}

/// Error curves on a training-time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurves {
    pub tau: Vec<f64>,
    pub e_train: Vec<f64>,
    pub e_test: Vec<f64>,
    pub e_test_class: Vec<Vec<f64>>,
    pub e_score_class: Vec<Vec<f64>>,
}

impl ErrorCurves {
    pub fn n_classes(&self) -> usize {
        self.e_test_class.len()
    }

    /// Pointwise mean of runs sharing the same grid.
    pub fn average(runs: &[ErrorCurves]) -> Result<ErrorCurves> {
        let first = runs.first().ok_or_else(|| Error::InvalidArgument("no runs to average".into()))?;
        if runs.iter().any(|r| r.tau != first.tau || r.n_classes() != first.n_classes()) {
            return Err(Error::DimensionMismatch("runs have different grids".into()));
        }
        let k = runs.len() as f64;
        let mean = |get: &dyn Fn(&ErrorCurves) -> &Vec<f64>| -> Vec<f64> {
            (0..first.tau.len()).map(|i| runs.iter().map(|r| get(r)[i]).sum::<f64>() / k).collect()
        };
        Ok(ErrorCurves {
            tau: first.tau.clone(),
            e_train: mean(&|r| &r.e_train),
            e_test: mean(&|r| &r.e_test),
            e_test_class: (0..first.n_classes()).map(|c| mean(&|r| &r.e_test_class[c])).collect(),
            e_score_class: (0..first.n_classes()).map(|c| mean(&|r| &r.e_score_class[c])).collect(),
        })
    }

    /// Class times from the class-conditional test curves.
    pub fn class_times(&self, options: &TimeExtraction) -> Result<Vec<ClassTimes>> {
        self.e_test_class.iter().map(|c| extract_times(&self.tau, c, options)).collect()
    }

    /// CSV with columns `tau, e_train, e_test, e_test_c{i}..., e_score_c{i}...`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let c = self.n_classes();
        let mut header = vec!["tau".to_string(), "e_train".into(), "e_test".into()];
        header.extend((0..c).map(|i| format!("e_test_c{i}")));
        header.extend((0..c).map(|i| format!("e_score_c{i}")));
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.tau.len() {
            let mut row = vec![self.tau[i], self.e_train[i], self.e_test[i]];
            row.extend((0..c).map(|k| self.e_test_class[k][i]));
            row.extend((0..c).map(|k| self.e_score_class[k][i]));
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Semi-analytical curves from the eigenpairs of `U_gep`, the projection and
/// the Gaussian-equivalent coefficients.
#[derive(Debug, Clone)]
pub struct SemiAnalytic {
    lambda: Array1<f64>,
    active: Vec<bool>,
    /// `‖v_q‖²`.
    v_norms: Array1<f64>,
    /// `(v_q·v_p)(ψ_qᵀŨ_cψ_p)` per class.
    h: Vec<Array2<f64>>,
    /// `v_q·ω_c^q/Γ_c` per class.
    d: Vec<Array1<f64>>,
    weights: Vec<f64>,
    gamma_sq: Vec<f64>,
    delta: f64,
    n: f64,
}

impl SemiAnalytic {
    pub fn new(
        eig: &SymEigen,
        w: &Array2<f64>,
        coeffs: &GepCoefficients,
        weights: &[f64],
        population_blocks: &[Array2<f64>],
    ) -> Result<Self> {
        let (p, n) = w.dim();
        if eig.len() != p || population_blocks.len() != coeffs.classes.len() || weights.len() != coeffs.classes.len() {
            return Err(Error::DimensionMismatch("eigenpairs, blocks, weights and coefficients disagree".into()));
        }
        let psi = &eig.vectors;
        let wt = w.t();
        let sqrt_n = (n as f64).sqrt();
        let omegas: Vec<Array2<f64>> = coeffs
            .classes
            .iter()
            .map(|k| wt.dot(&(psi * &k.gamma_tilde.view().insert_axis(Axis(1)))) / sqrt_n)
            .collect();
        let mut v = Array2::<f64>::zeros((n, p));
        for ((om, k), b) in omegas.iter().zip(&coeffs.classes).zip(weights) {
            v.scaled_add(b / k.gamma_sq.sqrt(), om);
        }
        let vtv = v.t().dot(&v);
        let v_norms = vtv.diag().to_owned();
        let h = population_blocks
            .iter()
            .map(|blk| &vtv * &psi.t().dot(blk).dot(psi))
            .collect();
        let d = omegas
            .iter()
            .zip(&coeffs.classes)
            .map(|(om, k)| (&v * om).sum_axis(Axis(0)) / k.gamma_sq.sqrt())
            .collect();
        let cut = SEMI_ANALYTIC_ZERO_CUT * eig.max_value().abs();
        Ok(Self {
            lambda: eig.values.clone(),
            active: eig.values.iter().map(|&l| l > cut).collect(),
            v_norms,
            h,
            d,
            weights: weights.to_vec(),
            gamma_sq: coeffs.classes.iter().map(|k| k.gamma_sq).collect(),
            delta: coeffs.clock.delta(),
            n: n as f64,
        })
    }

    fn factors(&self, tau: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((self.lambda.len(), tau.len()), |(q, i)| {
            if self.active[q] {
                -(-2.0 * self.lambda[q] * tau[i]).exp_m1() / self.lambda[q]
            } else {
                0.0
            }
        })
    }

    pub fn train(&self, tau: f64) -> f64 {
        let mut sum = 0.0;
        for q in 0..self.lambda.len() {
            if self.active[q] {
                let l = self.lambda[q];
                sum += self.v_norms[q] * -(-4.0 * l * tau).exp_m1() / l;
            }
        }
        1.0 - self.delta / self.n * sum
    }

    pub fn curves(&self, tau: &[f64]) -> ErrorCurves {
        let f = self.factors(tau);
        let (dn, c) = (self.delta / self.n, self.h.len());
        let e_train: Vec<f64> = tau.iter().map(|&t| self.train(t)).collect();
        let mut e_test_class = Vec::with_capacity(c);
        let mut e_score_class = Vec::with_capacity(c);
        for k in 0..c {
            let quad = (self.h[k].dot(&f) * &f).sum_axis(Axis(0));
            let lin = self.d[k].dot(&f);
            let test: Vec<f64> = quad.iter().zip(lin.iter()).map(|(q, l)| 1.0 + dn * q - 2.0 * dn * l).collect();
            // Score error written out term by term (without the 1/Δ rescaling of the test error).
            let g = self.gamma_sq[k];
            let score: Vec<f64> = quad
                .iter()
                .zip(lin.iter())
                .map(|(q, l)| 1.0 / g - 2.0 / self.n * l + q / self.n)
                .collect();
            e_test_class.push(test);
            e_score_class.push(score);
        }
        let e_test = (0..tau.len())
            .map(|i| self.weights.iter().zip(&e_test_class).map(|(b, e)| b * e[i]).sum())
            .collect();
        ErrorCurves {
            tau: tau.to_vec(),
            e_train,
            e_test,
            e_test_class,
            e_score_class,
        }
    }
}

/// Draws one instance (centroids, projection, training set, GEP noise) and
/// prepares its semi-analytical curves. `p` features, `m` samples; `N` is `spec.dim`.
pub fn semi_analytic_instance<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    p: usize,
    m: usize,
    clock: &DiffusionClock,
    activation: Activation,
    rule: &QuadratureRule,
    rng: &mut R,
) -> Result<SemiAnalytic> {
    let centroids = realize_centroids(spec, rng)?;
    let w = gaussian_projection(p, spec.dim, rng);
    let data = sample_dataset(spec, &centroids, m, rng)?;
    let coeffs = coeffs_vector(&w, spec, &centroids, clock, activation, rule)?;
    let u = gep_u(&data, &w, spec, &centroids, &coeffs, rng)?.u;
    let eig = sym_eigh(&u.view())?;
    drop(u);
    let blocks = population_u_blocks(&w, &coeffs);
    SemiAnalytic::new(&eig, &w, &coeffs, &spec.weights, &blocks)
}

/// Monte Carlo settings of a simulated gradient-descent run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdSettings {
    /// `η = eta_factor·N/Δ`, so one step advances `τ` by `eta_factor`.
    pub eta_factor: f64,
    /// Noise draws per training sample in `Û`, `V̂`.
    pub n_noise_draws: usize,
    /// Fresh samples per class for the test moments.
    pub n_eval: usize,
}

impl Default for GdSettings {
    fn default() -> Self {
        Self {
            eta_factor: 5e-5,
            n_noise_draws: crate::covariance::DEFAULT_NOISE_DRAWS,
            n_eval: 20_000,
        }
    }
}

/// One simulated training run: full-batch GD on the Monte Carlo loss of a
/// fresh instance, with test losses on fresh class samples.
///
/// The iterate after `k` steps is evaluated exactly in the eigenbasis of `Û`
/// (see [`gd_factor`](super::readout::gd_factor)), so every grid point costs
/// the same. Grid times are rounded to whole steps; the returned `tau` holds
/// the times actually reached.
#[allow(clippy::too_many_arguments)]
pub fn gd_curves_instance<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    p: usize,
    m: usize,
    clock: &DiffusionClock,
    activation: Activation,
    tau: &[f64],
    settings: &GdSettings,
    rng: &mut R,
) -> Result<ErrorCurves> {
    if !(settings.eta_factor > 0.0) {
        return Err(Error::InvalidArgument("eta_factor must be positive".into()));
    }
    let centroids = realize_centroids(spec, rng)?;
    let w = gaussian_projection(p, spec.dim, rng);
    let data = sample_dataset(spec, &centroids, m, rng)?;
    let est = empirical_uv(&data, &w, &spec.weights, clock, activation, settings.n_noise_draws, rng)?;
    for warning in &est.warnings {
        log::warn!("{warning}");
    }
    let eig = sym_eigh(&est.u.u.view())?;
    let top = eig.max_value();
    if settings.eta_factor * top > 1.0 {
        return Err(Error::Diverged {
            step: 0,
            norm: f64::INFINITY,
            bound: 1.0 / settings.eta_factor,
            stability: settings.eta_factor * top,
        });
    }
    let v = est.v.v;
    let modes = ReadoutPropagator::new(eig, &v, clock)?;
    let steps: Vec<u64> = tau.iter().map(|t| (t / settings.eta_factor).round().max(0.0) as u64).collect();
    let reached: Vec<f64> = steps.iter().map(|&k| k as f64 * settings.eta_factor).collect();
    let mut factors = Array2::<f64>::zeros((modes.eig.len(), tau.len()));
    for (i, &k) in steps.iter().enumerate() {
        factors.column_mut(i).assign(&modes.gd_factors(k, settings.eta_factor));
    }
    let train = ModalLoss::on_generator(&modes, &v, clock);
    let tests = (0..spec.n_classes())
        .map(|c| {
            let mom = EvalMoments::class(&w, clock, activation, spec, &centroids, c, settings.n_eval, rng)?;
            Ok(ModalLoss::new(&modes, &mom, clock))
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma_sq: Vec<f64> = spec.variances.iter().map(|&s| clock.gamma_sq(s)).collect();
    Ok(modal_curves(&reached, &factors, &train, &tests, &spec.weights, clock, &gamma_sq))
}

/// Curves of a readout family evaluated on Monte Carlo moments.
///
/// `factors` holds one column of mode factors per grid point; `train` is
/// the loss on the training moments, `tests[c]` on class-`c` test moments.
pub fn modal_curves(tau: &[f64], factors: &Array2<f64>, train: &ModalLoss, tests: &[ModalLoss], weights: &[f64], clock: &DiffusionClock, gamma_sq: &[f64]) -> ErrorCurves {
    let e_train = train.eval_many(factors);
    let e_test_class: Vec<Vec<f64>> = tests.iter().map(|m| m.eval_many(factors)).collect();
    let e_test = (0..tau.len())
        .map(|i| weights.iter().zip(&e_test_class).map(|(b, e)| b * e[i]).sum())
        .collect();
    let e_score_class = e_test_class
        .iter()
        .zip(gamma_sq)
        .map(|(e, g)| e.iter().map(|v| 1.0 / g + (v - 1.0) / clock.delta()).collect())
        .collect();
    ErrorCurves {
        tau: tau.to_vec(),
        e_train,
        e_test,
        e_test_class,
        e_score_class,
    }
}
