//! Numbers for qualitative phenomena: spikes at labeled points, the 1D
//! transport discrepancy and a TLᵖ-style closeness bound.

use crate::energy::oscillation;
use crate::error::{invalid, Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::sampling::{Density, PointCloud};
use crate::spatial::distance;

/// Default ball radius, in units of ε, for spike detection.
pub const DEFAULT_SPIKE_ALPHA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeReport {
    /// Oscillation at each labeled node.
    pub local: Vec<f64>,
    /// Median oscillation over unlabeled nodes away from every label; NaN
    /// when the label balls cover every node.
    pub background: f64,
    /// Largest local oscillation over the background; `+∞` when the
    /// background is flat but some label is not, `0` when both vanish.
    pub spike_ratio: f64,
}

/// Compares the oscillation `osc_{αε}(f)` at labeled nodes with its median
/// elsewhere. Nodes whose ball contains a labeled point are left out of the
/// background.
pub fn spike_report(cloud: &PointCloud, f: &[f64], eps: f64, alpha: f64) -> Result<SpikeReport> {
    if !(alpha > 0.0) || !(eps > 0.0) {
        return invalid(format!("alpha and eps must be positive, got {alpha}, {eps}"));
    }
    let radius = alpha * eps;
    let osc = oscillation(cloud, f, radius)?;
    let nl = cloud.num_labeled();
    let local: Vec<f64> = osc[..nl].to_vec();
    let mut rest: Vec<f64> = (nl..cloud.len())
        .filter(|&k| (0..nl).all(|i| distance(cloud.point(k), cloud.point(i)) > radius))
        .map(|k| osc[k])
        .collect();
    if rest.is_empty() {
        return Ok(SpikeReport {
            local,
            background: f64::NAN,
            spike_ratio: f64::NAN,
        });
    }
    let background = median(&mut rest);
    let peak = local.iter().cloned().fold(0.0, f64::max);
    let spike_ratio = if background > 0.0 {
        peak / background
    } else if peak > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(SpikeReport {
        local,
        background,
        spike_ratio,
    })
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Sorted positions with the original node index, after checking the cloud
/// lives on an interval with uniform density.
fn sorted_1d(cloud: &PointCloud) -> Result<(f64, f64, Vec<(f64, usize)>)> {
    let dom = cloud.domain();
    if dom.dim() != 1 {
        return Err(Error::Unsupported("transport diagnostics are one-dimensional".into()));
    }
    if !matches!(dom.density(), Density::Uniform) {
        return Err(Error::Unsupported(
            "transport diagnostics need a uniform density".into(),
        ));
    }
    if cloud.is_empty() {
        return invalid("empty cloud");
    }
    let mut xs: Vec<(f64, usize)> = cloud.coords().iter().cloned().zip(0..).collect();
    xs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok((dom.lower()[0], dom.upper()[0], xs))
}

/// `‖T − Id‖_∞` for the monotone map sending the i-th quantile block of the
/// interval to the i-th smallest sample.
pub fn transport_infty_1d(cloud: &PointCloud) -> Result<f64> {
    let (a, b, xs) = sorted_1d(cloud)?;
    let n = xs.len() as f64;
    let block = |i: usize| a + (b - a) * i as f64 / n;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &(x, _))| (x - block(i)).abs().max((x - block(i + 1)).abs()))
        .fold(0.0, f64::max))
}

/// `∫_l^r |x − c|^p dx`.
fn abs_power_integral(l: f64, r: f64, c: f64, p: f64) -> f64 {
    let prim = |t: f64| t.abs().powf(p + 1.0) / (p + 1.0);
    if c <= l {
        prim(r - c) - prim(l - c)
    } else if c >= r {
        prim(c - l) - prim(c - r)
    } else {
        prim(c - l) + prim(r - c)
    }
}

/// Upper bound on the TLᵖ distance between `(μ, g)` and `(μ_n, f)` from the
/// monotone coupling of the uniform measure with the empirical one.
pub fn tlp_upper_1d(cloud: &PointCloud, f: &[f64], g: impl Fn(f64) -> f64, p: f64) -> Result<f64> {
    if f.len() != cloud.len() {
        return invalid("function length differs from cloud size");
    }
    if !(p >= 1.0 && p.is_finite()) {
        return invalid(format!("p must be at least 1, got {p}"));
    }
    let (a, b, xs) = sorted_1d(cloud)?;
    let n = xs.len() as f64;
    let density = 1.0 / (b - a);
    let block = |i: usize| a + (b - a) * i as f64 / n;
    let mut total = 0.0;
    for (i, &(x, k)) in xs.iter().enumerate() {
        let (l, r) = (block(i), block(i + 1));
        let fk = f[k];
        let values = adaptive_simpson(&|t: f64| (g(t) - fk).abs().powf(p), l, r, 1e-12 * (r - l));
        total += density * (abs_power_integral(l, r, x, p) + values);
    }
    Ok(total.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_cloud, Domain, LabeledPoint};

    fn cloud_1d(xs: Vec<f64>, labels: Vec<f64>) -> PointCloud {
        PointCloud::new(Domain::unit(1).unwrap(), xs, labels, 0).unwrap()
    }

    fn centered(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
    }

    #[test]
    fn linear_function_has_no_spike() {
        // Labels well inside the interval so their balls are not truncated.
        let lab = vec![LabeledPoint::new(vec![0.3], 0.3), LabeledPoint::new(vec![0.7], 0.7)];
        let c = sample_cloud(&Domain::unit(1).unwrap(), &lab, 4000, 3).unwrap();
        let f: Vec<f64> = c.coords().to_vec();
        let r = spike_report(&c, &f, 0.05, 1.0).unwrap();
        assert!((r.spike_ratio - 1.0).abs() < 0.05, "{r:?}");
        assert!((r.background - 0.1).abs() < 0.005);
    }

    #[test]
    fn indicator_spike_and_constant() {
        let c = cloud_1d(centered(100), vec![1.0]);
        let mut f = vec![0.0; 100];
        f[0] = 1.0;
        let r = spike_report(&c, &f, 0.05, 1.0).unwrap();
        assert_eq!(r.local, vec![1.0]);
        assert_eq!(r.background, 0.0);
        assert_eq!(r.spike_ratio, f64::INFINITY);
        let r = spike_report(&c, &[0.4; 100], 0.05, 1.0).unwrap();
        assert_eq!(r.local, vec![0.0]);
        assert_eq!((r.background, r.spike_ratio), (0.0, 0.0));
        assert!(spike_report(&c, &f, 0.05, 0.0).is_err());
        // Balls of radius 1 around a label at 0.005 cover the interval.
        let r = spike_report(&c, &f, 0.5, 2.0).unwrap();
        assert!(r.background.is_nan() && r.spike_ratio.is_nan());
    }

    #[test]
    fn background_excludes_label_neighborhoods() {
        // Two spikes, but they only enter through the excluded balls.
        let c = cloud_1d(centered(200), vec![1.0, 1.0]);
        let mut f: Vec<f64> = c.coords().iter().map(|x| 0.01 * x).collect();
        f[0] = 1.0;
        f[1] = 1.0;
        let r = spike_report(&c, &f, 0.02, 1.0).unwrap();
        assert!((r.background - 0.01 * 0.04).abs() < 1e-4);
        assert!(r.spike_ratio > 100.0);
    }

    #[test]
    fn transport_examples() {
        for n in [1, 7, 100] {
            let t = transport_infty_1d(&cloud_1d(centered(n), vec![])).unwrap();
            assert!((t - 0.5 / n as f64).abs() < 1e-15);
            let xs: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
            let t = transport_infty_1d(&cloud_1d(xs, vec![])).unwrap();
            assert!((t - 1.0 / n as f64).abs() < 1e-15);
        }
        let t = transport_infty_1d(&cloud_1d(vec![0.3], vec![])).unwrap();
        assert!((t - 0.7).abs() < 1e-15);
        // Order of the input does not matter.
        let t = transport_infty_1d(&cloud_1d(vec![0.9, 0.1, 0.5], vec![])).unwrap();
        assert!((t - (0.9f64 - 2.0 / 3.0).max(1.0 / 3.0 - 0.1)).abs() < 1e-15);
        let d2 = PointCloud::new(Domain::unit(2).unwrap(), vec![0.5, 0.5], vec![], 0).unwrap();
        assert!(matches!(transport_infty_1d(&d2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn transport_shrinks_with_n() {
        let d = Domain::unit(1).unwrap();
        let med = |n: usize| {
            let mut v: Vec<f64> = (0..50)
                .map(|s| transport_infty_1d(&sample_cloud(&d, &[], n, s).unwrap()).unwrap())
                .collect();
            median(&mut v)
        };
        assert!(med(4000) < med(250));
    }

    #[test]
    fn abs_power_integral_oracle() {
        for &(l, r, c, p) in &[
            (0.0, 0.3, 0.1, 2.0),
            (0.2, 0.5, 0.0, 1.5),
            (0.2, 0.5, 0.9, 3.0),
            (0.0, 1.0, 0.5, 1.0),
        ] {
            let m = 200_000;
            let h = (r - l) / m as f64;
            let num: f64 = (0..m).map(|i| (l + (i as f64 + 0.5) * h - c).abs().powf(p) * h).sum();
            assert!((abs_power_integral(l, r, c, p) - num).abs() < 1e-9);
        }
    }

    #[test]
    fn tlp_examples() {
        let n = 50;
        let c = cloud_1d(centered(n), vec![]);
        // Constant g and f: only the transport term, 2n·∫_0^{1/(2n)} t^p dt.
        for p in [1.0, 2.0, 3.0] {
            let v = tlp_upper_1d(&c, &vec![0.7; n], |_| 0.7, p).unwrap();
            let h = 0.5 / n as f64;
            let want = (2.0 * n as f64 * h.powf(p + 1.0) / (p + 1.0)).powf(1.0 / p);
            assert!((v - want).abs() < 1e-12 * want.max(1.0), "{v} {want}");
        }
        // The value term adds to the transport term.
        let f: Vec<f64> = c.coords().to_vec();
        let with_values = tlp_upper_1d(&c, &f, |x| x, 2.0).unwrap();
        let transport = tlp_upper_1d(&c, &vec![0.0; n], |_| 0.0, 2.0).unwrap();
        assert!(with_values >= transport);
        // For g(x) = x and f = g at the block centers both terms coincide.
        assert!((with_values - 2f64.sqrt() * transport).abs() < 1e-10);
    }

    #[test]
    fn tlp_decreases_along_well_posed_sequence() {
        let d = Domain::unit(1).unwrap();
        let vals: Vec<f64> = [160, 640, 2560]
            .iter()
            .map(|&n| {
                let mut v: Vec<f64> = (0..15)
                    .map(|s| {
                        let c = sample_cloud(&d, &[], n, s).unwrap();
                        let f: Vec<f64> = c.coords().to_vec();
                        tlp_upper_1d(&c, &f, |x| x, 2.0).unwrap()
                    })
                    .collect();
                median(&mut v)
            })
            .collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2], "{vals:?}");
    }
}
