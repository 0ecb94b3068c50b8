//! Generalization and memorization times read off a test-error curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Options for [`extract_times`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeExtraction {
    /// Width, in grid points, of the Gaussian smoothing kernel. Zero disables smoothing.
    pub smoothing: f64,
    /// Level whose first upward crossing after the minimum marks `τ_m`.
    pub threshold: f64,
}

impl Default for TimeExtraction {
    fn default() -> Self {
        Self {
            smoothing: 2.0,
            threshold: 1.0,
        }
    }
}

/// Times extracted from one curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassTimes {
    pub tau_g: f64,
    /// `None` when the curve never climbs back to the threshold on the grid.
    pub tau_m: Option<f64>,
    /// Smoothed curve value at the minimum.
    pub min_value: f64,
    /// The minimum sits on the last grid point, so `τ_g` is only a lower bound.
    pub min_at_end: bool,
}

/// Gaussian smoothing in index space (the grid is assumed log-spaced).
fn smooth(y: &[f64], width: f64) -> Vec<f64> {
    if width <= 0.0 {
        return y.to_vec();
    }
    let half = (3.0 * width).ceil() as isize;
    let n = y.len() as isize;
    (0..n)
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for j in (i - half).max(0)..=(i + half).min(n - 1) {
                let d = (j - i) as f64 / width;
                let k = (-0.5 * d * d).exp();
                num += k * y[j as usize];
                den += k;
            }
            num / den
        })
        .collect()
}

/// Extracts `τ_g = argmin` (refined by a parabola in `log τ`) and the first
/// threshold crossing `τ_m > τ_g` (linear interpolation in `log τ`).
///
/// Grid points with `τ ≤ 0` are skipped.
pub fn extract_times(tau: &[f64], curve: &[f64], options: &TimeExtraction) -> Result<ClassTimes> {
    if tau.len() != curve.len() {
        return Err(Error::DimensionMismatch(format!("{} times but {} curve values", tau.len(), curve.len())));
    }
    if let Some(i) = curve.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCurve(i));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = tau
        .iter()
        .zip(curve)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, v)| (t.ln(), *v))
        .unzip();
    if x.len() < 3 {
        return Err(Error::InvalidArgument("need at least three positive grid times".into()));
    }
    let y = smooth(&y, options.smoothing);
    let k = y
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let last = x.len() - 1;
    let mut log_g = x[k];
    if k > 0 && k < last {
        let (x0, x1, x2) = (x[k - 1], x[k], x[k + 1]);
        let (y0, y1, y2) = (y[k - 1], y[k], y[k + 1]);
        let num = (x1 - x0).powi(2) * (y1 - y2) - (x1 - x2).powi(2) * (y1 - y0);
        let den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
        if den.abs() > 0.0 {
            log_g = (x1 - 0.5 * num / den).clamp(x0, x2);
        }
    }
    let th = options.threshold;
    let tau_m = (k + 1..=last).find(|&j| y[j] >= th && y[j - 1] < th).map(|j| {
        let s = (th - y[j - 1]) / (y[j] - y[j - 1]);
        (x[j - 1] + s * (x[j] - x[j - 1])).exp()
    });
    Ok(ClassTimes {
        tau_g: log_g.exp(),
        tau_m,
        min_value: y[k],
        min_at_end: k == last,
    })
}
