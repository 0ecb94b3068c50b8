//! Gauss–Hermite rules for expectations against the standard normal density.
//!
//! Rules use the probabilist convention: nodes and weights integrate against
//! `exp(-z²/2)/√(2π)`, so the weights sum to one. Physicist nodes from
//! [`gauss_quad`] are rescaled by `√2` and the weights by `1/√π`.

use gauss_quad::GaussHermite;

use crate::error::{Error, Result};

/// Default order. Tanh-type integrands with means up to ~10 agree with
/// order 320 to better than 1e-12 here; order 80 only reaches ~1e-10.
pub const DEFAULT_ORDER: usize = 160;

/// Correlations within this distance of ±1 take the degenerate 1D path.
const DEGENERATE_CORRELATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Builds a rule exact for polynomials up to degree `2·order − 1`.
    pub fn new(order: usize) -> Result<Self> {
        match order {
            0 => Err(Error::ZeroOrder),
            1 => Ok(Self {
                nodes: vec![0.0],
                weights: vec![1.0],
            }),
            _ => {
                let gh = GaussHermite::new(order)
                    .map_err(|e| Error::InvalidArgument(format!("gauss-hermite rule: {e}")))?;
                let mut pairs: Vec<(f64, f64)> = gh
                    .nodes()
                    .zip(gh.weights())
                    .map(|(x, w)| (x * std::f64::consts::SQRT_2, w / std::f64::consts::PI.sqrt()))
                    .collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let n = pairs.len();
                // Enforce exact mirror symmetry of nodes and weights.
                for i in 0..n / 2 {
                    let j = n - 1 - i;
                    let x = 0.5 * (pairs[j].0 - pairs[i].0);
                    let w = 0.5 * (pairs[i].1 + pairs[j].1);
                    pairs[i] = (-x, w);
                    pairs[j] = (x, w);
                }
                if n % 2 == 1 {
                    pairs[n / 2].0 = 0.0;
                }
                let total: f64 = pairs.iter().map(|p| p.1).sum();
                Ok(Self {
                    nodes: pairs.iter().map(|p| p.0).collect(),
                    weights: pairs.iter().map(|p| p.1 / total).collect(),
                })
            }
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(mean + std·z)]` for `z ~ N(0, 1)`.
    pub fn expect_1d<F: Fn(f64) -> f64>(&self, f: F, mean: f64, std: f64) -> f64 {
        debug_assert!(std >= 0.0, "negative standard deviation");
        if std == 0.0 {
            return f(mean);
        }
        // Mirrored nodes are summed in pairs so odd integrands cancel exactly.
        let n = self.nodes.len();
        let mut total = 0.0;
        for i in 0..n / 2 {
            let x = self.nodes[n - 1 - i];
            total += self.weights[i] * (f(mean - std * x) + f(mean + std * x));
        }
        if n % 2 == 1 {
            total += self.weights[n / 2] * f(mean);
        }
        total
    }

    /// `E[f(u, v)]` for a standard bivariate normal pair with correlation `corr`.
    ///
    /// Uses the lower-triangular square root `u = z₁`, `v = c·z₁ + √(1−c²)·z₂`.
    pub fn expect_2d_correlated<F: Fn(f64, f64) -> f64>(&self, f: F, corr: f64) -> Result<f64> {
        if !corr.is_finite() || corr.abs() > 1.0 + DEGENERATE_CORRELATION_TOL {
            return Err(Error::CorrelationOutOfRange(corr));
        }
        if corr >= 1.0 - DEGENERATE_CORRELATION_TOL {
            return Ok(self.expect_1d(|z| f(z, z), 0.0, 1.0));
        }
        if corr <= -1.0 + DEGENERATE_CORRELATION_TOL {
            return Ok(self.expect_1d(|z| f(z, -z), 0.0, 1.0));
        }
        let s = (1.0 - corr * corr).sqrt();
        let mut total = 0.0;
        for (&x1, &w1) in self.nodes.iter().zip(&self.weights) {
            let inner: f64 = self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(&x2, &w2)| w2 * f(x1, corr * x1 + s * x2))
                .sum();
            total += w1 * inner;
        }
        Ok(total)
    }
}

pub fn make_rule(order: usize) -> Result<QuadratureRule> {
    QuadratureRule::new(order)
}

/// Probabilist Hermite polynomial `Heₙ(x)` by the three-term recurrence.
pub fn hermite_he(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn order_zero_rejected() {
        assert!(matches!(QuadratureRule::new(0), Err(Error::ZeroOrder)));
    }

    #[test]
    fn order_one_is_the_origin() {
        let r = QuadratureRule::new(1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert_eq!(r.weights(), &[1.0]);
        assert_eq!(r.expect_1d(|z| z, 0.0, 1.0), 0.0);
    }

    #[test]
    fn order_two_nodes_are_unit() {
        let r = QuadratureRule::new(2).unwrap();
        assert_abs_diff_eq!(r.nodes()[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.nodes()[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights()[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(r.expect_1d(|z| z * z, 0.0, 1.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn weights_normalized_and_mirrored() {
        for order in [3, 17, 80, 160] {
            let r = QuadratureRule::new(order).unwrap();
            let s: f64 = r.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let n = r.order();
            for i in 0..n {
                assert_eq!(r.nodes()[i], -r.nodes()[n - 1 - i]);
                assert_eq!(r.weights()[i], r.weights()[n - 1 - i]);
                assert!(r.weights()[i] > 0.0);
            }
        }
    }

    #[test]
    fn stein_lemma_cross_check() {
        // E[z tanh z] = E[sech² z]. The poles of tanh at ±iπ/2 limit the
        // convergence rate: order 64 agrees to ~3e-9, order 160 to roundoff.
        let gap = |order| {
            let r = QuadratureRule::new(order).unwrap();
            let lhs = r.expect_1d(|z| z * z.tanh(), 0.0, 1.0);
            let rhs = r.expect_1d(|z| 1.0 / z.cosh().powi(2), 0.0, 1.0);
            (lhs - rhs).abs()
        };
        assert!(gap(64) < 5e-9);
        assert!(gap(100) < 1e-10);
        assert!(gap(DEFAULT_ORDER) < 1e-13);
    }

    #[test]
    fn default_order_converged_against_double() {
        let lo = QuadratureRule::new(DEFAULT_ORDER).unwrap();
        let hi = QuadratureRule::new(2 * DEFAULT_ORDER).unwrap();
        for (mean, std) in [(0.0, 1.0), (3.0, 0.7), (10.0, 1.2), (-6.0, 0.3)] {
            let f = |x: f64| x.tanh().powi(2);
            let a = lo.expect_1d(f, mean, std);
            let b = hi.expect_1d(f, mean, std);
            assert!((a - b).abs() < 1e-12, "mean {mean}: {a} vs {b}");
        }
    }

    #[test]
    fn simple_moments() {
        let r = QuadratureRule::new(DEFAULT_ORDER).unwrap();
        assert_abs_diff_eq!(r.expect_1d(|x| x, 3.0, 2.0), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.expect_1d(|x| x * x, 0.0, 1.0), 1.0, epsilon = 1e-12);
        assert_eq!(r.expect_1d(|x| x * x, 2.0, 0.0), 4.0);
    }

    #[test]
    fn correlated_pairs() {
        let r = QuadratureRule::new(40).unwrap();
        assert_abs_diff_eq!(r.expect_2d_correlated(|u, v| u * v, 0.3).unwrap(), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(
            r.expect_2d_correlated(|u, v| u.tanh() * v.tanh(), 0.0).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        // c = ±1 reduce to the diagonal
        let diag = r.expect_1d(|z| z.tanh().powi(2), 0.0, 1.0);
        assert_abs_diff_eq!(
            r.expect_2d_correlated(|u, v| u.tanh() * v.tanh(), 1.0).unwrap(),
            diag,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            r.expect_2d_correlated(|u, v| u.tanh() * v.tanh(), -1.0).unwrap(),
            -diag,
            epsilon = 1e-14
        );
        // c = 0 factorizes
        let m = r.expect_1d(|z| (z + 0.5).tanh(), 0.0, 1.0);
        assert_abs_diff_eq!(
            r.expect_2d_correlated(|u, v| (u + 0.5).tanh() * (v + 0.5).tanh(), 0.0).unwrap(),
            m * m,
            epsilon = 1e-14
        );
    }

    #[test]
    fn correlation_out_of_range() {
        let r = QuadratureRule::new(4).unwrap();
        assert!(matches!(
            r.expect_2d_correlated(|u, v| u * v, 1.1),
            Err(Error::CorrelationOutOfRange(_))
        ));
        assert!(r.expect_2d_correlated(|u, v| u * v, 1.0 + 1e-13).is_ok());
    }

    #[test]
    fn hermite_values() {
        assert_eq!(hermite_he(0, 2.0), 1.0);
        assert_eq!(hermite_he(1, 2.0), 2.0);
        assert_eq!(hermite_he(2, 2.0), 3.0);
        assert_eq!(hermite_he(3, 2.0), 2.0);
        // orthogonality: E[He_m He_n] = n! δ
        let r = QuadratureRule::new(30).unwrap();
        assert_abs_diff_eq!(r.expect_1d(|z| hermite_he(4, z).powi(2), 0.0, 1.0), 24.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.expect_1d(|z| hermite_he(4, z) * hermite_he(2, z), 0.0, 1.0), 0.0, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn exact_on_polynomials(order in 1usize..12, coeffs in prop::collection::vec(-2.0f64..2.0, 1..8)) {
            let deg = coeffs.len() - 1;
            prop_assume!(deg <= 2 * order - 1);
            let r = QuadratureRule::new(order).unwrap();
            let poly = |z: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c);
            // exact moments E[z^k] = (k-1)!! for even k
            let exact: f64 = coeffs.iter().enumerate().map(|(k, c)| {
                if k % 2 == 1 { 0.0 } else { c * (1..k).step_by(2).map(|j| j as f64).product::<f64>() }
            }).sum();
            prop_assert!((r.expect_1d(poly, 0.0, 1.0) - exact).abs() < 1e-9);
        }

        #[test]
        fn linear_in_integrand(a in -3.0f64..3.0, b in -3.0f64..3.0, mean in -2.0f64..2.0) {
            let r = QuadratureRule::new(20).unwrap();
            let f = |x: f64| x.tanh();
            let g = |x: f64| (0.5 * x).sin();
            let lhs = r.expect_1d(|x| a * f(x) + b * g(x), mean, 0.8);
            let rhs = a * r.expect_1d(f, mean, 0.8) + b * r.expect_1d(g, mean, 0.8);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn symmetric_integrand_exchange(c in -0.99f64..0.99) {
            let r = QuadratureRule::new(24).unwrap();
            let f = |u: f64, v: f64| (u + 0.3).tanh() * (v + 0.3).tanh() + u * v * v;
            let g = |u: f64, v: f64| f(v, u);
            let a = r.expect_2d_correlated(f, c).unwrap();
            let b = r.expect_2d_correlated(g, c).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
