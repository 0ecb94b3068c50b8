//! Readout training: exact gradient flow, explicit gradient descent, loss
//! estimates and semi-analytical error curves.
//!
//! Training time `τ` is measured in the gauge where gradient flow reads
//! `dA/dτ = −2(AU + Vᵀ/√Δ)`; a gradient-descent step with learning rate `η`
//! advances `τ` by `η̃ = ηΔ/N`.

pub mod analytic;
pub mod curves;
pub mod loss;
pub mod readout;
pub mod times;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::activation::Activation;

pub use analytic::analytic_train_error;
pub use curves::{gd_curves_instance, semi_analytic_instance, GdSettings, ErrorCurves, ModalLoss, ReadoutModes, SemiAnalytic};
pub use loss::{loss_mc, score_mse_mc, EvalMoments, LossSource};
pub use readout::{closed_form_readout, train_gd, GdSnapshot};
pub use times::{extract_times, ClassTimes, TimeExtraction};

/// Random-feature score model `s(x) = A φ(Wx/√N)`.
#[derive(Debug, Clone)]
pub struct RFModel {
    pub w: Array2<f64>,
    pub a: Array2<f64>,
    pub activation: Activation,
}

impl RFModel {
    /// Zero readout on a given projection.
    pub fn new(w: Array2<f64>, activation: Activation) -> Self {
        let a = Array2::zeros((w.ncols(), w.nrows()));
        Self { w, a, activation }
    }

    /// Projection with i.i.d. standard normal entries.
    pub fn gaussian<R: Rng + ?Sized>(p: usize, n: usize, activation: Activation, rng: &mut R) -> Self {
        Self::new(gaussian_projection(p, n, rng), activation)
    }

    pub fn n_features(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn score(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let scale = 1.0 / (self.dim() as f64).sqrt();
        let phi = self.w.dot(&x).mapv(|v| self.activation.eval(v * scale));
        self.a.dot(&phi)
    }
}

pub fn gaussian_projection<R: Rng + ?Sized>(p: usize, n: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((p, n), |_| rng.sample(StandardNormal))
}

/// Log-spaced grid of `n` points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && n >= 1);
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}
