//! Histogram comparisons of eigenvalue samples and spectral densities.
//!
//! Spectra of the feature covariance span several decades, so bins are
//! log-spaced. Distances are total variation between binned probability
//! vectors.

/// Log-spaced bin edges covering `[lo, hi]` with `bins` bins.
pub fn log_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && bins > 0);
    let (a, b) = (lo.ln(), hi.ln());
    (0..=bins)
        .map(|i| (a + (b - a) * i as f64 / bins as f64).exp())
        .collect()
}

/// Fraction of `samples` in each bin; samples outside the edges are dropped
/// from the counts but still count in the denominator.
pub fn bin_fractions(samples: &[f64], edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() - 1;
    let mut counts = vec![0.0; bins];
    for &x in samples {
        if x < edges[0] || x > edges[bins] {
            continue;
        }
        let k = edges.partition_point(|&e| e <= x).saturating_sub(1).min(bins - 1);
        counts[k] += 1.0;
    }
    let total = samples.len().max(1) as f64;
    counts.iter().map(|c| c / total).collect()
}

/// Mass of a density tabulated on an ascending grid falling in each bin,
/// by trapezoid on the grid refined with the bin edges (linear interpolation).
/// `point_masses` are `(location, weight)` pairs added to their bins.
pub fn density_bin_masses(grid: &[f64], density: &[f64], point_masses: &[(f64, f64)], edges: &[f64]) -> Vec<f64> {
    assert_eq!(grid.len(), density.len());
    let bins = edges.len() - 1;
    let mut out = vec![0.0; bins];
    let interp = |x: f64| -> f64 {
        if x <= grid[0] || x >= grid[grid.len() - 1] {
            return 0.0;
        }
        let k = grid.partition_point(|&g| g <= x);
        let (x0, x1) = (grid[k - 1], grid[k]);
        let (y0, y1) = (density[k - 1], density[k]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    };
    for b in 0..bins {
        let (lo, hi) = (edges[b], edges[b + 1]);
        let mut xs = vec![lo];
        let start = grid.partition_point(|&g| g <= lo);
        for &g in &grid[start..] {
            if g >= hi {
                break;
            }
            xs.push(g);
        }
        xs.push(hi);
        let mut mass = 0.0;
        for w in xs.windows(2) {
            mass += 0.5 * (interp(w[0]) + interp(w[1])) * (w[1] - w[0]);
        }
        out[b] = mass;
    }
    for &(x, w) in point_masses {
        if x >= edges[0] && x <= edges[bins] {
            let k = edges.partition_point(|&e| e <= x).saturating_sub(1).min(bins - 1);
            out[k] += w;
        }
    }
    out
}

/// `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Total variation between two eigenvalue samples binned on common log bins
/// spanning both samples (values below `floor` are clamped to it).
pub fn sample_tv_distance(a: &[f64], b: &[f64], bins: usize, floor: f64) -> f64 {
    let clamp = |v: &[f64]| v.iter().map(|&x| x.max(floor)).collect::<Vec<_>>();
    let (a, b) = (clamp(a), clamp(b));
    let lo = a.iter().chain(&b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(&b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let edges = log_edges(lo * (1.0 - 1e-9), hi * (1.0 + 1e-9), bins);
    total_variation(&bin_fractions(&a, &edges), &bin_fractions(&b, &edges))
}
