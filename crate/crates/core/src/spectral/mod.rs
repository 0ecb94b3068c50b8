//! Resolvent solver for the spectrum of `U_gep` in the centered-class regime.
//!
//! The resolvent pair `(g_Ψ, g_Ω)` solves two coupled algebraic equations in
//! the complex plane. Each real `λ` is reached by continuation in the
//! imaginary part `ε` of `z = λ + iε`, starting from the free guess `−1/z`
//! and ending at `ε = 0`. The density follows from `ρ = Im g_Ψ / π`.


mod edges;
mod solver;

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::gep::{coeffs_scalar, ScalarClass};
use crate::gmm::{DiffusionClock, MixtureSpec};
use crate::quadrature::QuadratureRule;


pub use edges::{edge_lambda, solve_edges, window_sweep, EdgeMethod, EdgeRecord, EdgeSide, EdgeSummary, WindowRow};
pub use solver::{delta_weight, saddle_jacobian, saddle_residuals, solve_grid, solve_point, PointSolution, IMAG_NOISE_FLOOR};

/// Densities below this value are set to zero.
pub const DENSITY_TRUNCATION: f64 = 1e-6;

/// Model ratios and per-class scalars entering the resolvent equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    pub chi_p: f64,
    /// `f64::INFINITY` removes the finite-sample terms.
    pub chi_m: f64,
    pub t: f64,
    pub weights: Vec<f64>,
    pub variances: Vec<f64>,
    pub scalars: Vec<ScalarClass>,
}

impl SpectralParams {
    pub fn new(chi_p: f64, chi_m: f64, weights: Vec<f64>, variances: Vec<f64>, scalars: Vec<ScalarClass>, t: f64) -> Result<Self> {
        let p = Self {
            chi_p,
            chi_m,
            t,
            weights,
            variances,
            scalars,
        };
        p.validate()?;
        Ok(p)
    }

    /// Scalars computed by quadrature for a centered mixture.
    pub fn for_mixture(chi_p: f64, chi_m: f64, weights: &[f64], variances: &[f64], t: f64, activation: Activation, rule: &QuadratureRule) -> Result<Self> {
        let spec = MixtureSpec::centered(1, weights.to_vec(), variances.to_vec())?;
        let clock = DiffusionClock::new(t)?;
        let sc = coeffs_scalar(&spec, &clock, activation, rule)?;
        Self::new(chi_p, chi_m, weights.to_vec(), variances.to_vec(), sc.classes, t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi_p > 0.0) || !(self.chi_m > 0.0) {
            return Err(Error::InvalidArgument(format!("chi_p = {}, chi_m = {} must be positive", self.chi_p, self.chi_m)));
        }
        if self.weights.len() != self.scalars.len() || self.variances.len() != self.scalars.len() || self.scalars.is_empty() {
            return Err(Error::DimensionMismatch("weights, variances and scalars must have one entry per class".into()));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 || self.weights.iter().any(|&b| b < 0.0) {
            return Err(Error::InvalidArgument("class weights must be nonnegative and sum to 1".into()));
        }
        DiffusionClock::new(self.t)?;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.scalars.len()
    }

    pub fn delta(&self) -> f64 {
        -(-2.0 * self.t).exp_m1()
    }

    /// `Σ_c b_c Δγ̃_c²/Γ_c²`.
    pub fn kappa(&self) -> f64 {
        let d = self.delta();
        self.weights
            .iter()
            .zip(&self.scalars)
            .map(|(b, k)| b * d * k.gamma_tilde.powi(2) / k.gamma_sq)
            .sum()
    }

    /// Location `Σ_c b_c ς_c` of the point mass.
    pub fn varsigma(&self) -> f64 {
        self.weights.iter().zip(&self.scalars).map(|(b, k)| b * k.varsigma).sum()
    }

    /// Location of the point mass: `ς`, or `ς + Σ_c b_c h_c²` without
    /// finite-sample terms (`χ_m = ∞`), where the `h²` terms become a shift.
    pub fn point_mass_location(&self) -> f64 {
        if self.chi_m.is_infinite() {
            self.varsigma() + self.weights.iter().zip(&self.scalars).map(|(b, k)| b * k.h2).sum::<f64>()
        } else {
            self.varsigma()
        }
    }

    pub(crate) fn ratio(&self) -> f64 {
        if self.chi_m.is_infinite() {
            0.0
        } else {
            self.chi_p / self.chi_m
        }
    }

    /// Asymptotic edges of the rightmost bulk, `ς + Σb h² + (κ + Σbγ²)(1 ± √χ_p)²`.
    pub fn gen_bulk_edges_asymptotic(&self) -> (f64, f64) {
        let h: f64 = self.weights.iter().zip(&self.scalars).map(|(b, k)| b * k.h2).sum();
        let g: f64 = self.weights.iter().zip(&self.scalars).map(|(b, k)| b * k.gamma * k.gamma).sum();
        let s = self.kappa() + g;
        let r = self.chi_p.sqrt();
        let base = self.varsigma() + h;
        (base + s * (1.0 - r).powi(2), base + s * (1.0 + r).powi(2))
    }
}

/// Numerical settings of the grid solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Strictly decreasing imaginary parts, ending with 0.
    pub eps_schedule: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub truncation: f64,
    /// Runs of nonzero density shorter than this are merged into a neighbor.
    pub min_bulk_points: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_schedule: eps_schedule(60),
            max_iter: 200,
            tol: 1e-12,
            truncation: DENSITY_TRUNCATION,
            min_bulk_points: 3,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let s = &self.eps_schedule;
        if s.len() < 2 || *s.last().unwrap() != 0.0 || s.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("epsilon schedule must be strictly decreasing and end with 0".into()));
        }
        Ok(())
    }
}

/// `n` log-spaced values from 100 down to 1e-9, followed by 0.
pub fn eps_schedule(n: usize) -> Vec<f64> {
    let mut s = crate::dynamics::log_grid(1e-9, 1e2, n);
    s.reverse();
    s.push(0.0);
    s
}

/// Default grid: 10⁴ log-spaced points on `[1e-8, 1e2]`.
pub fn default_grid() -> Vec<f64> {
    crate::dynamics::log_grid(1e-8, 1e2, 10_000)
}

/// Grid with extra resolution around `centers`: each center gets `points`
/// log-spaced values within a relative half-width `rel`.
pub fn refined_grid(base: &[f64], centers: &[f64], rel: f64, points: usize) -> Vec<f64> {
    let mut g = base.to_vec();
    for &c in centers {
        if c > 0.0 {
            g.extend(crate::dynamics::log_grid(c / (1.0 + rel), c * (1.0 + rel), points));
        }
    }
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs());
    g
}

/// A maximal run of positive density on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bulk {
    /// First and last grid index with positive density.
    pub first: usize,
    pub last: usize,
    pub lower: f64,
    pub upper: f64,
    /// Trapezoid mass over the run (extended by one grid step on each side).
    pub mass: f64,
}

/// Point mass carried by modes orthogonal to all features and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub location: f64,
    pub weight: f64,
}

/// Resolvent and density on a grid.
#[derive(Debug, Clone)]
pub struct SpectralSolution {
    pub lambda: Vec<f64>,
    pub g_psi: Vec<Complex64>,
    pub g_omega: Vec<Complex64>,
    /// `NaN` marks grid points where the solver did not converge.
    pub rho: Vec<f64>,
    pub rho_omega: Vec<f64>,
    pub converged: Vec<bool>,
    pub residual: Vec<f64>,
    pub bulks: Vec<Bulk>,
    pub point_mass: PointMass,
    pub diagnostics: Vec<String>,
}

impl SpectralSolution {
    pub fn n_missing(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }

    /// Trapezoid mass of the continuous density (missing points count as zero).
    pub fn continuous_mass(&self) -> f64 {
        trapezoid(&self.lambda, &self.rho)
    }

    /// Continuous mass plus the point mass.
    pub fn total_mass(&self) -> f64 {
        self.continuous_mass() + self.point_mass.weight
    }

    /// Grid spacing around index `i`.
    pub fn step_at(&self, i: usize) -> f64 {
        let n = self.lambda.len();
        let lo = self.lambda[i.saturating_sub(1)];
        let hi = self.lambda[(i + 1).min(n - 1)];
        0.5 * (hi - lo)
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "lambda,re_g_psi,im_g_psi,re_g_omega,im_g_omega,rho,rho_omega,converged")?;
        for i in 0..self.lambda.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.lambda[i],
                self.g_psi[i].re,
                self.g_psi[i].im,
                self.g_omega[i].re,
                self.g_omega[i].im,
                self.rho[i],
                self.rho_omega[i],
                u8::from(self.converged[i])
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Total variation between the solver density (point mass included) and the
/// histogram of `eigenvalues`, on `bins` log bins spanning both.
pub fn histogram_tv(solution: &SpectralSolution, eigenvalues: &[f64], bins: usize) -> Result<f64> {
    if eigenvalues.is_empty() || bins == 0 {
        return Err(Error::InvalidArgument("need eigenvalues and at least one bin".into()));
    }
    let floor = 1e-3 * solution.lambda[0].max(f64::MIN_POSITIVE);
    let ev: Vec<f64> = eigenvalues.iter().map(|&x| x.max(floor)).collect();
    let ev_lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let ev_hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let th_hi = solution.bulks.last().map(|b| b.upper).unwrap_or(ev_hi);
    let th_lo = solution.bulks.first().map(|b| b.lower).unwrap_or(ev_lo);
    let lo = 0.5 * ev_lo.min(th_lo).min(solution.point_mass.location.max(floor));
    let hi = 1.2 * ev_hi.max(th_hi);
    let edges = crate::histogram::log_edges(lo, hi, bins);
    let emp = crate::histogram::bin_fractions(&ev, &edges);
    let rho: Vec<f64> = solution.rho.iter().map(|r| if r.is_finite() { *r } else { 0.0 }).collect();
    let th = crate::histogram::density_bin_masses(&solution.lambda, &rho, &[(solution.point_mass.location, solution.point_mass.weight)], &edges);
    Ok(crate::histogram::total_variation(&emp, &th))
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| {
            let a = if ys[0].is_finite() { ys[0] } else { 0.0 };
            let b = if ys[1].is_finite() { ys[1] } else { 0.0 };
            0.5 * (a + b) * (xs[1] - xs[0])
        })
        .sum()
}

/// Maximal runs of positive density. Missing points inside a run are kept in
/// it; runs shorter than `min_points` are merged into the nearest run.
pub(crate) fn find_bulks(lambda: &[f64], rho: &[f64], min_points: usize, diagnostics: &mut Vec<String>) -> Vec<Bulk> {
    let n = rho.len();
    // A missing point counts as positive when the nearest known points on both sides are.
    let known_left: Vec<Option<bool>> = rho
        .iter()
        .scan(None, |last, &r| {
            if !r.is_nan() {
                *last = Some(r > 0.0);
            }
            Some(*last)
        })
        .collect();
    let mut known_right = vec![None; n];
    let mut last = None;
    for i in (0..n).rev() {
        if !rho[i].is_nan() {
            last = Some(rho[i] > 0.0);
        }
        known_right[i] = last;
    }
    let positive: Vec<bool> = (0..n)
        .map(|i| if rho[i].is_nan() { known_left[i] == Some(true) && known_right[i] == Some(true) } else { rho[i] > 0.0 })
        .collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if positive[i] {
            let start = i;
            while i + 1 < n && positive[i + 1] {
                i += 1;
            }
            runs.push((start, i));
        }
        i += 1;
    }
    loop {
        if runs.len() < 2 {
            break;
        }
        let Some(k) = runs.iter().position(|(a, b)| b - a + 1 < min_points) else { break };
        let (a, b) = runs[k];
        let gap_left = if k > 0 { Some(a - runs[k - 1].1) } else { None };
        let gap_right = runs.get(k + 1).map(|r| r.0 - b);
        let into_left = match (gap_left, gap_right) {
            (Some(l), Some(r)) => l <= r,
            (Some(_), None) => true,
            _ => false,
        };
        diagnostics.push(format!(
            "merged narrow density run [{:.6e}, {:.6e}] ({} points) into its {} neighbor",
            lambda[a],
            lambda[b],
            b - a + 1,
            if into_left { "left" } else { "right" }
        ));
        if into_left {
            runs[k - 1].1 = b;
        } else {
            runs[k + 1].0 = a;
        }
        runs.remove(k);
    }
    runs.into_iter()
        .map(|(a, b)| {
            let lo = a.saturating_sub(1);
            let hi = (b + 1).min(n - 1);
            Bulk {
                first: a,
                last: b,
                lower: lambda[a],
                upper: lambda[b],
                mass: trapezoid(&lambda[lo..=hi], &rho[lo..=hi]),
            }
        })
        .collect()
}
