//! Closed-form gradient flow and explicit gradient descent for the readout.

use ndarray::{Array1, Array2, Axis};

use crate::covariance::frobenius;
use crate::error::{Error, Result};
use crate::gmm::DiffusionClock;
use crate::linalg::{power_max_eig, SymEigen};

/// Eigenvalues below this fraction of the largest are exact zeros of the flow.
pub const RANK_EPS: f64 = 1e-12;

/// Gradient-flow mode factor `(1 − e^{−2λτ})/λ`, equal to `2τ` on zero modes.
pub fn flow_factor(lambda: f64, tau: f64, zero_cut: f64) -> f64 {
    if lambda.abs() <= zero_cut {
        2.0 * tau
    } else {
        -(-2.0 * lambda * tau).exp_m1() / lambda
    }
}

/// Mode factor after `k` gradient-descent steps of size `η̃` from `A = 0`:
/// `(1 − (1 − 2η̃λ)^k)/λ`, equal to `2kη̃` on zero modes.
pub fn gd_factor(lambda: f64, steps: u64, eta_tilde: f64, zero_cut: f64) -> f64 {
    if lambda.abs() <= zero_cut {
        return 2.0 * steps as f64 * eta_tilde;
    }
    let r = 1.0 - 2.0 * eta_tilde * lambda;
    let pow = if r > 0.0 {
        (steps as f64 * r.ln()).exp()
    } else {
        r.powf(steps as f64)
    };
    (1.0 - pow) / lambda
}

/// Precomputed `−(1/√Δ)VᵀΨ` so that `A(τ) = B diag(f(τ)) Ψᵀ`.
#[derive(Debug, Clone)]
pub struct ReadoutPropagator {
    pub eig: SymEigen,
    /// `−VᵀΨ/√Δ`, shape `N×P`.
    pub b: Array2<f64>,
    pub zero_cut: f64,
}

impl ReadoutPropagator {
    pub fn new(eig: SymEigen, v: &Array2<f64>, clock: &DiffusionClock) -> Result<Self> {
        if v.nrows() != eig.len() {
            return Err(Error::DimensionMismatch(format!(
                "V has {} rows, U has {} eigenpairs",
                v.nrows(),
                eig.len()
            )));
        }
        let delta = clock.delta();
        if delta <= 0.0 {
            return Err(Error::InvalidArgument("readout dynamics need t > 0".into()));
        }
        let b = v.t().dot(&eig.vectors) * (-1.0 / delta.sqrt());
        let zero_cut = RANK_EPS * eig.max_value().abs();
        Ok(Self { eig, b, zero_cut })
    }

    fn assemble(&self, f: &Array1<f64>) -> Array2<f64> {
        let scaled = &self.b * &f.view().insert_axis(Axis(0));
        scaled.dot(&self.eig.vectors.t())
    }

    pub fn flow_factors(&self, tau: f64) -> Array1<f64> {
        self.eig.values.mapv(|l| flow_factor(l, tau, self.zero_cut))
    }

    pub fn gd_factors(&self, steps: u64, eta_tilde: f64) -> Array1<f64> {
        self.eig.values.mapv(|l| gd_factor(l, steps, eta_tilde, self.zero_cut))
    }

    /// Readout under exact gradient flow at time `τ`.
    pub fn at(&self, tau: f64) -> Array2<f64> {
        self.assemble(&self.flow_factors(tau))
    }

    /// Readout after `steps` gradient-descent steps, exactly.
    pub fn after_steps(&self, steps: u64, eta_tilde: f64) -> Array2<f64> {
        self.assemble(&self.gd_factors(steps, eta_tilde))
    }

    /// `τ → ∞` limit `−(1/√Δ)VᵀU⁺`.
    pub fn limit(&self) -> Array2<f64> {
        let f = self.eig.values.mapv(|l| if l.abs() <= self.zero_cut { 0.0 } else { 1.0 / l });
        self.assemble(&f)
    }
}

/// `A(τ) = −(1/√Δ)VᵀU⁻¹(I − e^{−2Uτ})` from the eigenpairs of `U`.
pub fn closed_form_readout(eig: &SymEigen, v: &Array2<f64>, clock: &DiffusionClock, tau: f64) -> Result<Array2<f64>> {
    Ok(ReadoutPropagator::new(eig.clone(), v, clock)?.at(tau))
}

/// Loss `1 + (Δ/N)Tr(AUAᵀ) + (2√Δ/N)Tr(VA)` in terms of the moment matrices.
pub fn quadratic_loss(a: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>, clock: &DiffusionClock) -> f64 {
    let n = a.nrows() as f64;
    let delta = clock.delta();
    let au = a.dot(u);
    let quad: f64 = (&au * a).sum();
    let lin: f64 = (&a.t() * v).sum();
    1.0 + delta / n * quad + 2.0 * delta.sqrt() / n * lin
}

/// `∂E/∂A = 2(Δ/N)(AU + Vᵀ/√Δ)`.
pub fn loss_gradient(a: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>, clock: &DiffusionClock) -> Array2<f64> {
    let n = a.nrows() as f64;
    let delta = clock.delta();
    (a.dot(u) + &v.t() / delta.sqrt()) * (2.0 * delta / n)
}

#[derive(Debug, Clone)]
pub struct GdSnapshot {
    pub step: u64,
    pub tau: f64,
    pub a: Array2<f64>,
}

/// Full-batch gradient descent from `A = 0` on the quadratic loss defined by
/// `(U, V)`, recording snapshots at the requested step counts.
///
/// Aborts when `‖A‖_F` exceeds `10⁶` times the gradient-flow bound
/// `2τ‖V‖_F/√Δ`, reporting `η̃λ_max` (stable below 1).
pub fn train_gd(
    u: &Array2<f64>,
    v: &Array2<f64>,
    clock: &DiffusionClock,
    eta: f64,
    snapshot_steps: &[u64],
) -> Result<Vec<GdSnapshot>> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {eta} must be positive")));
    }
    let p = u.nrows();
    let n = v.ncols();
    let delta = clock.delta();
    if delta <= 0.0 {
        return Err(Error::InvalidArgument("gradient descent needs t > 0".into()));
    }
    let eta_tilde = eta * delta / n as f64;
    let mut steps: Vec<u64> = snapshot_steps.to_vec();
    steps.sort_unstable();
    steps.dedup();
    let last = steps.last().copied().unwrap_or(0);
    let v_norm = frobenius(&v.view()) / delta.sqrt();
    let mut a = Array2::<f64>::zeros((n, p));
    let mut out = Vec::with_capacity(steps.len());
    let mut next = 0;
    let vt = v.t().to_owned() / delta.sqrt();
    for k in 0..=last {
        while next < steps.len() && steps[next] == k {
            out.push(GdSnapshot {
                step: k,
                tau: k as f64 * eta_tilde,
                a: a.clone(),
            });
            next += 1;
        }
        if k == last {
            break;
        }
        let mut grad = a.dot(u);
        grad += &vt;
        a.scaled_add(-2.0 * eta_tilde, &grad);
        if k % 64 == 0 {
            let norm = frobenius(&a.view());
            let bound = 1e6 * (2.0 * (k + 1) as f64 * eta_tilde * v_norm).max(1.0);
            if !norm.is_finite() || norm > bound {
                return Err(Error::Diverged {
                    step: k as usize,
                    norm,
                    bound,
                    stability: eta_tilde * power_max_eig(&u.view(), 200),
                });
            }
        }
    }
    Ok(out)
}
