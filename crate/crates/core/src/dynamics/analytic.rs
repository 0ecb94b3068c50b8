//! Training error from the solved spectral densities alone.

use crate::error::{Error, Result};
use crate::spectral::{SpectralParams, SpectralSolution};

/// `E_train(τ) = 1 − Δχ_p (Σ_c b_c γ̃_c/Γ_c)² ∫ ρ_Ω(λ)(1 − e^{−4λτ})/λ dλ`
/// by the trapezoid rule on the solver grid.
///
/// Valid for centroids of norm `O(1)`, where the Hermite coefficients are
/// homogeneous across features. Missing grid points are treated as zero density.
pub fn analytic_train_error(solution: &SpectralSolution, params: &SpectralParams, tau: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    let lambda = &solution.lambda;
    if lambda.len() != solution.rho_omega.len() || lambda.len() < 2 {
        return Err(Error::DimensionMismatch("density table needs at least two points".into()));
    }
    let amplitude: f64 = params
        .weights
        .iter()
        .zip(&params.scalars)
        .map(|(b, k)| b * k.gamma_tilde / k.gamma_sq.sqrt())
        .sum();
    let prefactor = params.delta() * params.chi_p * amplitude * amplitude;
    let rho: Vec<f64> = solution.rho_omega.iter().map(|r| if r.is_finite() { *r } else { 0.0 }).collect();
    Ok(tau
        .iter()
        .map(|&t| {
            let integral = lambda
                .windows(2)
                .zip(rho.windows(2))
                .map(|(l, r)| {
                    let f = |x: f64, y: f64| if y > 0.0 { -y * (-4.0 * x * t).exp_m1() / x } else { 0.0 };
                    0.5 * (f(l[0], r[0]) + f(l[1], r[1])) * (l[1] - l[0])
                })
                .sum::<f64>();
            1.0 - prefactor * integral
        })
        .collect())
}
