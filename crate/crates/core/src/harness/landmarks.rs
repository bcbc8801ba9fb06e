//! Landmark extraction from error curves and power-law fits.

use crate::error::{invalid, Error, Result};

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" rule). `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Grid point with the smallest finite value; ties go to the smaller ε.
pub fn find_eps_star(eps: &[f64], mean_err: &[f64]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&e, &v) in eps.iter().zip(mean_err) {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, bv)| v < bv) {
            best = Some((e, v));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::NoData("error curve has no finite values".into()))
}

/// Centered moving average; the window shrinks symmetrically at the ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let w = half.min(i).min(n - 1 - i);
            let s = &values[i - w..=i + w];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

/// Three-point second derivative on a nonuniform grid at interior index `i`.
pub fn second_derivative(x: &[f64], y: &[f64], i: usize) -> f64 {
    let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
    2.0 * (y[i + 1] * h0 - y[i] * (h0 + h1) + y[i - 1] * h1) / (h0 * h1 * (h0 + h1))
}

/// Grid point at or above `eps_star` where `−err''` is largest, after
/// smoothing with an odd `window`. Ties go to the smaller ε.
pub fn find_eps_upper(eps: &[f64], mean_err: &[f64], eps_star: f64, window: usize) -> Result<f64> {
    if window == 0 || window.is_multiple_of(2) {
        return invalid(format!("smoothing window must be odd, got {window}"));
    }
    if eps.len() != mean_err.len() {
        return invalid("grid and curve lengths differ");
    }
    let kept: Vec<(f64, f64)> = eps
        .iter()
        .cloned()
        .zip(mean_err.iter().cloned())
        .filter(|(_, v)| v.is_finite())
        .collect();
    let x: Vec<f64> = kept.iter().map(|k| k.0).collect();
    let y = smooth(&kept.iter().map(|k| k.1).collect::<Vec<_>>(), window);
    let above = x.iter().filter(|&&e| e >= eps_star).count();
    if above < 5 {
        return Err(Error::NoData(format!(
            "need at least 5 grid points at or above ε* = {eps_star}, found {above}"
        )));
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 1..x.len() - 1 {
        if x[i] < eps_star {
            continue;
        }
        let v = -second_derivative(&x, &y, i);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((x[i], v));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::NoData("no interior grid point above ε*".into()))
}

/// Power law `ε ≈ a · n^{−b}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub a: f64,
    pub b: f64,
    /// Number of (largest) n values used.
    pub k: usize,
}

/// Least squares of `log ε` on `log n` over the `k` largest `n`.
pub fn fit_scaling(ns: &[usize], eps: &[f64], k: usize) -> Result<ScalingFit> {
    if ns.len() != eps.len() {
        return invalid("n and ε lists differ in length");
    }
    if k < 2 || ns.len() < k {
        return invalid(format!("need at least k = {k} ≥ 2 points, got {}", ns.len()));
    }
    if ns.contains(&0) || eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return invalid("scaling fit needs positive values");
    }
    let mut pts: Vec<(f64, f64)> = ns.iter().map(|&n| n as f64).zip(eps.iter().cloned()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pts = &pts[pts.len() - k..];
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k as f64;
    let my = ly.iter().sum::<f64>() / k as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return invalid("scaling fit needs distinct n values");
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(ScalingFit {
        a: (my - slope * mx).exp(),
        b: -slope,
        k,
    })
}
