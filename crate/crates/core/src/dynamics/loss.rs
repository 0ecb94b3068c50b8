//! Monte Carlo estimates of the denoising loss and of the score error.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::activation::Activation;
use crate::covariance::features;
use crate::error::{Error, Result};
use crate::gmm::{sample_class, true_score, Dataset, DiffusionClock, MixtureSpec};
use crate::linalg::syrk_ata_add;

const CHUNK_ROWS: usize = 2048;

/// Clean points entering the loss.
#[derive(Debug, Clone, Copy)]
pub enum LossSource<'a> {
    /// Training samples, each with `n_eval` noise draws.
    Dataset(&'a Dataset),
    /// `n_eval` fresh samples of one class of the mixture.
    Class {
        spec: &'a MixtureSpec,
        centroids: &'a Array2<f64>,
        class: usize,
    },
}

/// `(1/(N·n)) Σ ‖√Δ A φ(W x_t/√N) + ξ‖²` with `x_t = x e^{−t} + √Δ ξ`.
pub fn loss_mc<R: Rng + ?Sized>(
    a: &Array2<f64>,
    w: &Array2<f64>,
    clock: &DiffusionClock,
    activation: Activation,
    source: LossSource<'_>,
    n_eval: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_eval == 0 {
        return Err(Error::InvalidArgument("n_eval must be positive".into()));
    }
    let n = w.ncols();
    let (decay, sd) = (clock.decay(), clock.delta().sqrt());
    let mut total = 0.0;
    let mut count = 0usize;
    let mut accumulate = |clean: &Array2<f64>, rng: &mut R| {
        let xi = Array2::from_shape_fn(clean.dim(), |_| rng.sample::<f64, _>(StandardNormal));
        let noised = clean * decay + &xi * sd;
        let pred = features(&noised.view(), w, activation).dot(&a.t());
        let resid = pred * sd + &xi;
        total += resid.iter().map(|r| r * r).sum::<f64>();
        count += clean.nrows();
    };
    match source {
        LossSource::Dataset(data) => {
            for row in data.samples.rows() {
                let clean = Array2::from_shape_fn((n_eval, n), |(_, j)| row[j]);
                accumulate(&clean, rng);
            }
        }
        LossSource::Class { spec, centroids, class } => {
            let mut left = n_eval;
            while left > 0 {
                let rows = left.min(CHUNK_ROWS);
                let clean = sample_class(spec, centroids, class, rows, rng);
                accumulate(&clean, rng);
                left -= rows;
            }
        }
    }
    Ok(total / (count * n) as f64)
}

/// `(1/N) E‖A φ(Wx/√N) − s_true(x, t)‖²` over `x` from class `c` at time `t`.
#[allow(clippy::too_many_arguments)]
pub fn score_mse_mc<R: Rng + ?Sized>(
    a: &Array2<f64>,
    w: &Array2<f64>,
    clock: &DiffusionClock,
    activation: Activation,
    spec: &MixtureSpec,
    centroids: &Array2<f64>,
    class: usize,
    n_eval: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_eval == 0 {
        return Err(Error::InvalidArgument("n_eval must be positive".into()));
    }
    let n = w.ncols();
    let (decay, sd) = (clock.decay(), clock.delta().sqrt());
    let mut total = 0.0;
    let mut left = n_eval;
    while left > 0 {
        let rows = left.min(CHUNK_ROWS);
        let clean = sample_class(spec, centroids, class, rows, rng);
        let xi = Array2::from_shape_fn((rows, n), |_| rng.sample::<f64, _>(StandardNormal));
        let x = clean * decay + xi * sd;
        let pred = features(&x.view(), w, activation).dot(&a.t());
        for (row, p) in x.rows().into_iter().zip(pred.rows()) {
            let s = true_score(row, clock, spec, centroids);
            total += p.iter().zip(&s).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
        }
        left -= rows;
    }
    Ok(total / (n_eval * n) as f64)
}

/// Monte Carlo moments `Û = E[φφᵀ]`, `V̂ = E[φξᵀ]` of one evaluation set.
///
/// The loss of any readout on the same draws is
/// `ξ̄² + (Δ/N)Tr(AÛAᵀ) + (2√Δ/N)Tr(V̂A)`, where `ξ̄² = E‖ξ‖²/N`.
#[derive(Debug, Clone)]
pub struct EvalMoments {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub xi_sq: f64,
}

impl EvalMoments {
    /// Moments over `n_eval` fresh samples of class `c` with one noise draw each.
    #[allow(clippy::too_many_arguments)]
    pub fn class<R: Rng + ?Sized>(
        w: &Array2<f64>,
        clock: &DiffusionClock,
        activation: Activation,
        spec: &MixtureSpec,
        centroids: &Array2<f64>,
        class: usize,
        n_eval: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_eval == 0 {
            return Err(Error::InvalidArgument("n_eval must be positive".into()));
        }
        let (p, n) = w.dim();
        let (decay, sd) = (clock.decay(), clock.delta().sqrt());
        let mut u = Array2::<f64>::zeros((p, p));
        let mut v = Array2::<f64>::zeros((p, n));
        let mut xi_sq = 0.0;
        let scale = 1.0 / n_eval as f64;
        let mut left = n_eval;
        while left > 0 {
            let rows = left.min(CHUNK_ROWS);
            let clean = sample_class(spec, centroids, class, rows, rng);
            let xi = Array2::from_shape_fn((rows, n), |_| rng.sample::<f64, _>(StandardNormal));
            let mut noised = clean;
            Zip::from(&mut noised).and(&xi).for_each(|x, &z| *x = decay * *x + sd * z);
            let phi = features(&noised.view(), w, activation);
            syrk_ata_add(&mut u, &phi.view(), scale);
            ndarray::linalg::general_mat_mul(scale, &phi.t(), &xi, 1.0, &mut v);
            xi_sq += xi.iter().map(|z| z * z).sum::<f64>() * scale / n as f64;
            left -= rows;
        }
        Ok(Self { u, v, xi_sq })
    }

    /// Exact expectations over the noise: `ξ̄² = 1`.
    pub fn from_expectations(u: Array2<f64>, v: Array2<f64>) -> Self {
        Self { u, v, xi_sq: 1.0 }
    }

    pub fn loss(&self, a: &Array2<f64>, clock: &DiffusionClock) -> f64 {
        super::readout::quadratic_loss(a, &self.u, &self.v, clock) - 1.0 + self.xi_sq
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }
}
