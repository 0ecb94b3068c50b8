//! Spectral edges from the three-equation edge system, and the timescale summary.

use serde::{Deserialize, Serialize};

use super::solver::{solve_point, IMAG_NOISE_FLOOR};
use super::{solve_grid, SolverOptions, SpectralParams, SpectralSolution};
use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

/// How an edge location was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMethod {
    /// Root of the edge system, consistent with the grid support.
    EdgeSystem,
    /// Bisection of the density support between two grid points.
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSide {
    Lower,
    Upper,
}

/// One bulk boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub bulk: usize,
    pub side: EdgeSide,
    pub lambda: f64,
    pub g_psi: f64,
    pub g_omega: f64,
    pub omega: f64,
    pub method: EdgeMethod,
    /// Outermost grid point with positive density on this side.
    pub grid_boundary: f64,
}

/// The three critical eigenvalues, their timescales and windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSummary {
    pub lambda_gen: Option<f64>,
    pub lambda_mem1: Option<f64>,
    pub lambda_mem2: Option<f64>,
    pub tau_gen: Option<f64>,
    pub tau_mem1: Option<f64>,
    pub tau_mem2: Option<f64>,
    pub w_g: Option<f64>,
    pub w_m: Option<f64>,
    pub n_bulks: usize,
    /// Fewer than three bulks were resolved.
    pub merged: bool,
    pub edges: Vec<EdgeRecord>,
    pub diagnostics: Vec<String>,
}

impl EdgeSummary {
    pub fn is_complete(&self) -> bool {
        self.lambda_gen.is_some() && self.lambda_mem1.is_some() && self.lambda_mem2.is_some()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct ClassTerms {
    /// `Σ b h²/D`, `Σ b γ²/D`, `Σ b h²(h² + ωγ²)/D²`, `Σ b γ²(h² + ωγ²)/D²`.
    h: f64,
    g: f64,
    hw: f64,
    gw: f64,
}

fn class_terms(gp: f64, go: f64, w: f64, params: &SpectralParams) -> ClassTerms {
    let r = params.ratio();
    let mut s = ClassTerms { h: 0.0, g: 0.0, hw: 0.0, gw: 0.0 };
    for (b, k) in params.weights.iter().zip(&params.scalars) {
        let g2 = k.gamma * k.gamma;
        let d = 1.0 + r * (g2 * go + k.h2 * gp);
        let mix = k.h2 + w * g2;
        s.h += b * k.h2 / d;
        s.g += b * g2 / d;
        s.hw += b * k.h2 * mix / (d * d);
        s.gw += b * g2 * mix / (d * d);
    }
    s
}

/// Edge system in `(g_Ψ*, g_Ω*, ω*)`, each equation multiplied through so that
/// its terms are `O(1)`.
fn edge_residuals(x: [f64; 3], params: &SpectralParams) -> [f64; 3] {
    let [gp, go, w] = x;
    let cp = params.chi_p;
    let r = params.ratio();
    let s = class_terms(gp, go, w, params);
    [
        -(1.0 - 1.0 / cp) + w / cp - 2.0 * go / (cp * gp) + r * gp * gp * s.hw,
        w / cp - go * go / (cp * gp * gp) - r * go * go * s.gw,
        1.0 / cp - go * (params.kappa() + 1.0 / (cp * gp) + s.g),
    ]
}

/// Edge location from a solution of the edge system.
pub fn edge_lambda(gp: f64, go: f64, params: &SpectralParams) -> f64 {
    let cp = params.chi_p;
    let s = class_terms(gp, go, 0.0, params);
    params.varsigma() + s.h - (1.0 - 1.0 / cp) / gp - go / (cp * gp * gp)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col] == 0.0 || !m[piv][col].is_finite() {
            return None;
        }
        m.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let mut v = m[i][3];
        for k in i + 1..3 {
            v -= m[i][k] * x[k];
        }
        x[i] = v / m[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn rnorm(r: &[f64; 3]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Levenberg–Marquardt with a central-difference Jacobian.
fn solve_edge_system(start: [f64; 3], params: &SpectralParams, max_iter: usize, tol: f64) -> Option<[f64; 3]> {
    let mut x = start;
    let mut r = edge_residuals(x, params);
    let mut rn = rnorm(&r);
    if !rn.is_finite() {
        return None;
    }
    let mut mu = 1e-3;
    for _ in 0..max_iter {
        if rn <= tol {
            return Some(x);
        }
        let mut j = [[0.0; 3]; 3];
        for k in 0..3 {
            let h = 1e-7 * x[k].abs().max(1e-300);
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let (rp, rm) = (edge_residuals(xp, params), edge_residuals(xm, params));
            for i in 0..3 {
                j[i][k] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for a in 0..3 {
            for b in 0..3 {
                jtj[a][b] = (0..3).map(|i| j[i][a] * j[i][b]).sum();
            }
            jtr[a] = -(0..3).map(|i| j[i][a] * r[i]).sum::<f64>();
        }
        let mut improved = false;
        while mu < 1e16 {
            let mut m = jtj;
            for a in 0..3 {
                m[a][a] *= 1.0 + mu;
            }
            if let Some(d) = solve3(m, jtr) {
                let trial = [x[0] + d[0], x[1] + d[1], x[2] + d[2]];
                let rt = edge_residuals(trial, params);
                let tn = rnorm(&rt);
                if tn < rn {
                    x = trial;
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
    (rn <= tol).then_some(x)
}

fn has_density(params: &SpectralParams, lambda: f64, options: &SolverOptions) -> bool {
    let p = solve_point(params, lambda, options);
    p.converged && p.g_psi.im > IMAG_NOISE_FLOOR * p.g_psi.norm() && p.g_psi.im / std::f64::consts::PI >= options.truncation
}

/// Support boundary between an outside point and an inside point.
fn bisect_edge(params: &SpectralParams, outside: f64, inside: f64, options: &SolverOptions) -> f64 {
    let (mut out, mut inn) = (outside, inside);
    for _ in 0..60 {
        let mid = (out * inn).sqrt();
        if has_density(params, mid, options) {
            inn = mid;
        } else {
            out = mid;
        }
        if (inn - out).abs() <= 1e-12 * inn.abs() {
            break;
        }
    }
    0.5 * (out + inn)
}

/// Tolerance and iteration cap for the edge system.
const EDGE_TOL: f64 = 1e-11;
const EDGE_MAX_ITER: usize = 200;

/// Locates both edges of every bulk and classifies the critical eigenvalues:
/// `λ_gen` is the lower edge of the rightmost bulk, `λ_mem1` the upper edge of
/// the bulk below it and `λ_mem2` the lower edge of the leftmost bulk.
pub fn solve_edges(params: &SpectralParams, solution: &SpectralSolution, options: &SolverOptions) -> Result<EdgeSummary> {
    if solution.bulks.is_empty() {
        return Err(Error::NoBulk);
    }
    let n = solution.lambda.len();
    let mut diagnostics = Vec::new();
    let mut edges = Vec::with_capacity(2 * solution.bulks.len());
    for (k, bulk) in solution.bulks.iter().enumerate() {
        for side in [EdgeSide::Lower, EdgeSide::Upper] {
            let (inside, outside) = match side {
                EdgeSide::Lower => (bulk.first, bulk.first.checked_sub(1)),
                EdgeSide::Upper => (bulk.last, (bulk.last + 1 < n).then_some(bulk.last + 1)),
            };
            let gp = solution.g_psi[inside];
            let go = solution.g_omega[inside];
            let omega = if gp.im != 0.0 { go.im / gp.im } else { 0.0 };
            let step = solution.step_at(inside);
            let boundary = solution.lambda[inside];
            let root = solve_edge_system([gp.re, go.re, omega], params, EDGE_MAX_ITER, EDGE_TOL);
            let from_system = root.map(|x| (edge_lambda(x[0], x[1], params), x));
            let consistent = from_system.filter(|(l, _)| l.is_finite() && (l - boundary).abs() <= step * 1.5 + 1e-15 * boundary.abs());
            let record = match (consistent, outside) {
                (Some((lambda, x)), _) => EdgeRecord {
                    bulk: k,
                    side,
                    lambda,
                    g_psi: x[0],
                    g_omega: x[1],
                    omega: x[2],
                    method: EdgeMethod::EdgeSystem,
                    grid_boundary: boundary,
                },
                (None, Some(out)) => {
                    match from_system {
                        Some((l, _)) => diagnostics.push(format!(
                            "bulk {k} {side:?} edge: edge-system root λ = {l:.6e} is inconsistent with the grid boundary {boundary:.6e}; bisecting"
                        )),
                        None => diagnostics.push(format!("bulk {k} {side:?} edge: edge system did not converge; bisecting")),
                    }
                    let lambda = bisect_edge(params, solution.lambda[out], boundary, options);
                    let p = solve_point(params, lambda, options);
                    EdgeRecord {
                        bulk: k,
                        side,
                        lambda,
                        g_psi: p.g_psi.re,
                        g_omega: p.g_omega.re,
                        omega,
                        method: EdgeMethod::Bisection,
                        grid_boundary: boundary,
                    }
                }
                (None, None) => {
                    diagnostics.push(format!("bulk {k} {side:?} edge touches the end of the grid"));
                    EdgeRecord {
                        bulk: k,
                        side,
                        lambda: boundary,
                        g_psi: gp.re,
                        g_omega: go.re,
                        omega,
                        method: EdgeMethod::Bisection,
                        grid_boundary: boundary,
                    }
                }
            };
            edges.push(record);
        }
    }
    let nb = solution.bulks.len();
    let edge = |bulk: usize, side: EdgeSide| edges.iter().find(|e| e.bulk == bulk && e.side == side).map(|e| e.lambda);
    let (gen, mem1, mem2) = match nb {
        1 => (edge(0, EdgeSide::Lower), None, None),
        2 => {
            // The rightmost bulk alone carries weight 1/χp; more means it absorbed the central one.
            if solution.bulks[1].mass < 1.5 / params.chi_p {
                (edge(1, EdgeSide::Lower), edge(0, EdgeSide::Upper), None)
            } else {
                (None, None, edge(0, EdgeSide::Lower))
            }
        }
        _ => {
            if nb > 3 {
                diagnostics.push(format!("{nb} bulks resolved; using the outer two and the one below the rightmost"));
            }
            (edge(nb - 1, EdgeSide::Lower), edge(nb - 2, EdgeSide::Upper), edge(0, EdgeSide::Lower))
        }
    };
    if nb < 3 {
        diagnostics.push(format!("only {nb} bulk(s) resolved; bulks have merged"));
    }
    let tau = |l: Option<f64>| l.map(|v| 0.5 / v);
    let (tg, tm1, tm2) = (tau(gen), tau(mem1), tau(mem2));
    Ok(EdgeSummary {
        lambda_gen: gen,
        lambda_mem1: mem1,
        lambda_mem2: mem2,
        tau_gen: tg,
        tau_mem1: tm1,
        tau_mem2: tm2,
        w_g: tm1.zip(tg).map(|(a, b)| a / b),
        w_m: tm2.zip(tm1).map(|(a, b)| a / b),
        n_bulks: nb,
        merged: nb < 3,
        edges,
        diagnostics,
    })
}

/// One cell of a window sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    /// Variance ratio `σ₂²/σ₁²`.
    pub v: f64,
    pub b1: f64,
    pub w_g: Option<f64>,
    pub w_m: Option<f64>,
    pub merged: bool,
}

/// Windows over a grid of variance ratios `v = σ₂²/σ₁²` (with `σ₁²` fixed)
/// and first-class weights `b₁`, for two classes.
#[allow(clippy::too_many_arguments)]
pub fn window_sweep(
    chi_p: f64,
    chi_m: f64,
    sigma1_sq: f64,
    t: f64,
    ratios: &[f64],
    b1s: &[f64],
    activation: Activation,
    rule: &QuadratureRule,
    grid: &[f64],
    options: &SolverOptions,
) -> Result<Vec<WindowRow>> {
    let mut rows = Vec::with_capacity(ratios.len() * b1s.len());
    for &v in ratios {
        for &b1 in b1s {
            let params = SpectralParams::for_mixture(chi_p, chi_m, &[b1, 1.0 - b1], &[sigma1_sq, v * sigma1_sq], t, activation, rule)?;
            let sol = solve_grid(&params, grid, options)?;
            let e = solve_edges(&params, &sol, options)?;
            rows.push(WindowRow {
                v,
                b1,
                w_g: e.w_g,
                w_m: e.w_m,
                merged: e.merged,
            });
        }
    }
    Ok(rows)
}
