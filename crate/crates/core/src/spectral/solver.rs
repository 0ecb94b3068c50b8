//! Residuals of the resolvent equations and the per-point continuation solver.

use num_complex::Complex64;
use rayon::prelude::*;

use super::{find_bulks, PointMass, SolverOptions, SpectralParams, SpectralSolution};
use crate::error::{Error, Result};

type C = Complex64;

/// Imaginary parts below this fraction of `|g|` are rounding residue of the
/// final real-axis solve (visible next to the point mass, where `|g|` is huge).
pub const IMAG_NOISE_FLOOR: f64 = 1e-10;

struct Sums {
    /// `Σ b h²/D`, `Σ b γ²/D`.
    h: C,
    g: C,
    /// `Σ b h⁴/D²`, `Σ b h²γ²/D²`, `Σ b γ⁴/D²`.
    hh: C,
    hg: C,
    gg: C,
}

fn class_sums(g_psi: C, g_omega: C, params: &SpectralParams) -> Result<Sums> {
    let r = params.ratio();
    let mut s = Sums {
        h: C::new(0.0, 0.0),
        g: C::new(0.0, 0.0),
        hh: C::new(0.0, 0.0),
        hg: C::new(0.0, 0.0),
        gg: C::new(0.0, 0.0),
    };
    for (b, k) in params.weights.iter().zip(&params.scalars) {
        let g2 = k.gamma * k.gamma;
        let d = 1.0 + r * (g2 * g_omega + k.h2 * g_psi);
        let inv = d.inv();
        if !inv.is_finite() {
            return Err(Error::NonFiniteResidual { term: "1/(1 + (χp/χm)(γ²g_Ω + h²g_Ψ))" });
        }
        let inv2 = inv * inv;
        s.h += b * k.h2 * inv;
        s.g += b * g2 * inv;
        s.hh += b * k.h2 * k.h2 * inv2;
        s.hg += b * k.h2 * g2 * inv2;
        s.gg += b * g2 * g2 * inv2;
    }
    Ok(s)
}

fn inverses(g_psi: C, g_omega: C) -> Result<(C, C)> {
    let ip = g_psi.inv();
    if !ip.is_finite() {
        return Err(Error::NonFiniteResidual { term: "1/g_psi" });
    }
    let io = g_omega.inv();
    if !io.is_finite() {
        return Err(Error::NonFiniteResidual { term: "1/g_omega" });
    }
    Ok((ip, io))
}

/// Residuals `(F_Ψ, F_Ω)` of the resolvent equations, each multiplied
/// through by its resolvent so that both are `O(1)`:
///
/// `F_Ψ = (1 − 1/χp) + g_Ω/(χp g_Ψ) − g_Ψ Σ_c b_c(ς_c − z) − g_Ψ Σ_c b_c h_c²/D_c`
/// `F_Ω = 1/χp − g_Ω[κ + 1/(χp g_Ψ) + Σ_c b_c γ_c²/D_c]`
///
/// with `D_c = 1 + (χp/χm)(γ_c² g_Ω + h_c² g_Ψ)`.
pub fn saddle_residuals(g_psi: C, g_omega: C, z: C, params: &SpectralParams) -> Result<[C; 2]> {
    let (ip, _) = inverses(g_psi, g_omega)?;
    let s = class_sums(g_psi, g_omega, params)?;
    let cp = params.chi_p;
    let f_psi = (1.0 - 1.0 / cp) + g_omega * ip / cp - g_psi * (params.varsigma() - z) - g_psi * s.h;
    let f_omega = 1.0 / cp - g_omega * (params.kappa() + ip / cp + s.g);
    if !f_psi.is_finite() {
        return Err(Error::NonFiniteResidual { term: "F_psi" });
    }
    if !f_omega.is_finite() {
        return Err(Error::NonFiniteResidual { term: "F_omega" });
    }
    Ok([f_psi, f_omega])
}

/// Complex Jacobian `∂(F_Ψ, F_Ω)/∂(g_Ψ, g_Ω)`, row-major.
pub fn saddle_jacobian(g_psi: C, g_omega: C, z: C, params: &SpectralParams) -> Result<[[C; 2]; 2]> {
    let (ip, _) = inverses(g_psi, g_omega)?;
    let s = class_sums(g_psi, g_omega, params)?;
    let (cp, r) = (params.chi_p, params.ratio());
    let ip2 = ip * ip;
    let d_psi_psi = -g_omega * ip2 / cp - (params.varsigma() - z) - s.h + g_psi * r * s.hh;
    let d_psi_omega = ip / cp + g_psi * r * s.hg;
    let d_omega_psi = g_omega * (ip2 / cp + r * s.hg);
    let d_omega_omega = -(params.kappa() + ip / cp + s.g) + g_omega * r * s.gg;
    Ok([[d_psi_psi, d_psi_omega], [d_omega_psi, d_omega_omega]])
}

fn norm(r: &[C; 2]) -> f64 {
    (r[0].norm_sqr() + r[1].norm_sqr()).sqrt()
}

struct LmOutcome {
    g: [C; 2],
    residual: f64,
    converged: bool,
}

/// Levenberg–Marquardt on the four real components, written with the
/// holomorphic Jacobian: `(JᴴJ + μ diag(JᴴJ)) δ = −Jᴴ F`.
fn lm_solve(start: [C; 2], z: C, params: &SpectralParams, max_iter: usize, tol: f64) -> LmOutcome {
    let mut g = start;
    let Ok(mut r) = saddle_residuals(g[0], g[1], z, params) else {
        return LmOutcome {
            g,
            residual: f64::INFINITY,
            converged: false,
        };
    };
    let mut rn = norm(&r);
    let mut mu = 1e-3;
    for _ in 0..max_iter {
        if rn <= tol {
            break;
        }
        let Ok(j) = saddle_jacobian(g[0], g[1], z, params) else { break };
        let a00 = j[0][0].norm_sqr() + j[1][0].norm_sqr();
        let a11 = j[0][1].norm_sqr() + j[1][1].norm_sqr();
        let a01 = j[0][0].conj() * j[0][1] + j[1][0].conj() * j[1][1];
        let b0 = -(j[0][0].conj() * r[0] + j[1][0].conj() * r[1]);
        let b1 = -(j[0][1].conj() * r[0] + j[1][1].conj() * r[1]);
        let mut improved = false;
        while mu < 1e16 {
            let m00 = a00 * (1.0 + mu);
            let m11 = a11 * (1.0 + mu);
            let det = m00 * m11 - a01.norm_sqr();
            let d0 = (b0 * m11 - a01 * b1) / det;
            let d1 = (b1 * m00 - a01.conj() * b0) / det;
            let trial = [g[0] + d0, g[1] + d1];
            if let Ok(rt) = saddle_residuals(trial[0], trial[1], z, params) {
                let tn = norm(&rt);
                if tn < rn {
                    g = trial;
                    r = rt;
                    rn = tn;
                    mu = (mu / 3.0).max(1e-15);
                    improved = true;
                    break;
                }
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    LmOutcome {
        g,
        residual: rn,
        converged: rn <= tol,
    }
}

/// Resolvent pair at one real `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSolution {
    pub g_psi: C,
    pub g_omega: C,
    pub residual: f64,
    pub converged: bool,
}

/// Continuation in `ε` along `z = λ + iε` using `options.eps_schedule`.
pub fn solve_point(params: &SpectralParams, lambda: f64, options: &SolverOptions) -> PointSolution {
    continuation(params, lambda, &options.eps_schedule, options)
}

fn continuation(params: &SpectralParams, lambda: f64, schedule: &[f64], options: &SolverOptions) -> PointSolution {
    let z0 = C::new(lambda, schedule[0]);
    let mut g = [-z0.inv(), -z0.inv()];
    let mut out = PointSolution {
        g_psi: g[0],
        g_omega: g[1],
        residual: f64::INFINITY,
        converged: false,
    };
    let mut herglotz = true;
    for &eps in schedule {
        let z = C::new(lambda, eps);
        let step = lm_solve(g, z, params, options.max_iter, options.tol);
        g = step.g;
        if eps > 0.0 && g[0].im < 0.0 {
            herglotz = false;
        }
        out = PointSolution {
            g_psi: g[0],
            g_omega: g[1],
            residual: step.residual,
            converged: step.converged,
        };
    }
    out.converged &= herglotz;
    out
}

/// Weight of the point mass at `s = point_mass_location()`, from `ε Im g_Ψ(s + iε)` at small `ε`.
pub fn delta_weight(params: &SpectralParams, options: &SolverOptions) -> f64 {
    let s = params.point_mass_location();
    let floor = 1e-6 * s.abs().max(1e-12);
    let schedule: Vec<f64> = options.eps_schedule.iter().copied().filter(|&e| e >= floor).chain(std::iter::once(floor)).collect();
    let mut schedule = schedule;
    schedule.dedup();
    let last = *schedule.last().unwrap();
    let sol = continuation(params, s, &schedule, options);
    (last * sol.g_psi.im).clamp(0.0, 1.0)
}

/// Solves every grid point independently (in parallel) and extracts bulks.
pub fn solve_grid(params: &SpectralParams, grid: &[f64], options: &SolverOptions) -> Result<SpectralSolution> {
    params.validate()?;
    options.validate()?;
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("λ grid must be strictly ascending".into()));
    }
    let points: Vec<PointSolution> = grid.par_iter().map(|&l| solve_point(params, l, options)).collect();
    let mut diagnostics = Vec::new();
    let missing = points.iter().filter(|p| !p.converged).count();
    if missing > 0 {
        diagnostics.push(format!("{missing} of {} grid points did not converge", grid.len()));
    }
    let density = |v: f64, scale: f64, ok: bool| {
        if !ok {
            f64::NAN
        } else if v <= IMAG_NOISE_FLOOR * scale {
            0.0
        } else {
            let d = v / std::f64::consts::PI;
            if d < options.truncation {
                0.0
            } else {
                d
            }
        }
    };
    let rho: Vec<f64> = points.iter().map(|p| density(p.g_psi.im, p.g_psi.norm(), p.converged)).collect();
    let rho_omega: Vec<f64> = points.iter().map(|p| density(p.g_omega.im, p.g_omega.norm(), p.converged)).collect();
    let bulks = find_bulks(grid, &rho, options.min_bulk_points, &mut diagnostics);
    Ok(SpectralSolution {
        lambda: grid.to_vec(),
        g_psi: points.iter().map(|p| p.g_psi).collect(),
        g_omega: points.iter().map(|p| p.g_omega).collect(),
        rho,
        rho_omega,
        converged: points.iter().map(|p| p.converged).collect(),
        residual: points.iter().map(|p| p.residual).collect(),
        bulks,
        point_mass: PointMass {
            location: params.point_mass_location(),
            weight: delta_weight(params, options),
        },
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::gep::ScalarClass;
    use crate::quadrature::QuadratureRule;

    fn fig2(t: f64) -> SpectralParams {
        SpectralParams::for_mixture(60.0, 30.0, &[0.5, 0.5], &[0.5, 0.25], t, Activation::Tanh, &QuadratureRule::new(100).unwrap()).unwrap()
    }

    /// Single class with `h² = 0`, `χ_m = ∞`: `U = s WWᵀ/N` with `s = κ + γ²`.
    fn wishart_params(chi_p: f64) -> SpectralParams {
        let k = ScalarClass {
            beta_tilde: 1.0,
            beta: 0.64,
            gamma: 0.8,
            gamma_tilde: 0.9,
            varsigma: 0.0,
            h2: 0.0,
            gamma_sq: 1.0,
        };
        SpectralParams::new(chi_p, f64::INFINITY, vec![1.0], vec![1.0], vec![k], 0.2).unwrap()
    }

    /// Closed-form resolvent of `s WWᵀ/N` (P×P, rank N, P/N = χp).
    fn wishart_resolvent(z: C, s: f64, chi_p: f64) -> C {
        let q = 1.0 / chi_p;
        let scale = s * chi_p;
        let (lm, lp) = ((1.0 - q.sqrt()).powi(2), (1.0 + q.sqrt()).powi(2));
        let x = z / scale;
        // Stieltjes transform of the unit-variance law with aspect q, G ~ 1/x.
        let root = (x - lp).sqrt() * (x - lm).sqrt();
        let g_small = (x - (1.0 - q) - root) / (2.0 * q * x) / scale;
        -q * g_small - (1.0 - q) / z
    }

    #[test]
    fn residuals_small_far_from_spectrum() {
        let p = fig2(0.01);
        let z = C::new(1e4, 0.0);
        let g = -z.inv();
        let r = saddle_residuals(g, g, z, &p).unwrap();
        assert!(r[0].norm() < 1e-2 && r[1].norm() < 1e-2, "{r:?}");
        let z2 = C::new(1e6, 0.0);
        let r2 = saddle_residuals(-z2.inv(), -z2.inv(), z2, &p).unwrap();
        assert!(r2[0].norm() < r[0].norm() / 50.0);
    }

    #[test]
    fn wishart_closed_form_annihilates_residuals() {
        let chi_p = 4.0;
        let p = wishart_params(chi_p);
        let s = p.kappa() + 0.64;
        for z in [C::new(0.3, 0.1), C::new(2.0, 1e-3), C::new(7.0, 0.5), C::new(-1.0, 0.2)] {
            let g_psi = wishart_resolvent(z, s, chi_p);
            let g_omega = -g_psi * ((chi_p - 1.0) + chi_p * z * g_psi);
            let r = saddle_residuals(g_psi, g_omega, z, &p).unwrap();
            assert!(r[0].norm() < 1e-10 && r[1].norm() < 1e-10, "z = {z}: {r:?}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = fig2(0.01);
        let z = C::new(0.5, 0.3);
        let (gp, go) = (C::new(-0.4, 0.7), C::new(-0.2, 0.3));
        let j = saddle_jacobian(gp, go, z, &p).unwrap();
        let h = 1e-6;
        let rp = saddle_residuals(gp + h, go, z, &p).unwrap();
        let rm = saddle_residuals(gp - h, go, z, &p).unwrap();
        let op = saddle_residuals(gp, go + h, z, &p).unwrap();
        let om = saddle_residuals(gp, go - h, z, &p).unwrap();
        for k in 0..2 {
            assert!(((rp[k] - rm[k]) / (2.0 * h) - j[k][0]).norm() < 1e-6);
            assert!(((op[k] - om[k]) / (2.0 * h) - j[k][1]).norm() < 1e-6);
        }
    }

    #[test]
    fn non_finite_terms_are_named() {
        let p = fig2(0.01);
        let z = C::new(1.0, 0.0);
        let zero = C::new(0.0, 0.0);
        assert!(matches!(
            saddle_residuals(zero, C::new(1.0, 0.0), z, &p),
            Err(Error::NonFiniteResidual { term: "1/g_psi" })
        ));
    }

    #[test]
    fn solver_recovers_wishart_density() {
        let chi_p = 4.0;
        let p = wishart_params(chi_p);
        let s = p.kappa() + 0.64;
        let opts = SolverOptions::default();
        for lambda in [0.5, 1.5, 3.0, 4.0, 9.0, 20.0] {
            let sol = solve_point(&p, lambda, &opts);
            assert!(sol.converged);
            let exact = wishart_resolvent(C::new(lambda, 1e-14), s, chi_p);
            assert!((sol.g_psi - exact).norm() < 1e-8 * exact.norm().max(1.0), "λ = {lambda}: {} vs {exact}", sol.g_psi);
        }
        let w = delta_weight(&p, &opts);
        assert!((w - (1.0 - 1.0 / chi_p)).abs() < 1e-4, "delta weight {w}");
    }

    #[test]
    fn off_spectrum_resolvent_is_real() {
        let p = fig2(0.01);
        let sol = solve_point(&p, 80.0, &SolverOptions::default());
        assert!(sol.converged);
        assert!(sol.g_psi.im.abs() < 1e-12 && sol.g_psi.re < 0.0);
    }

    #[test]
    fn solution_is_deterministic() {
        let p = fig2(0.01);
        let grid = crate::dynamics::log_grid(1e-3, 50.0, 64);
        let opts = SolverOptions::default();
        let a = solve_grid(&p, &grid, &opts).unwrap();
        let b = solve_grid(&p, &grid, &opts).unwrap();
        assert_eq!(a.g_psi, b.g_psi);
        assert_eq!(a.rho, b.rho);
    }
}
