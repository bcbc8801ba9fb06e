//! Error metrics against continuum references.

use crate::error::{invalid, Result};
use crate::sampling::PointCloud;

/// `((1/n) Σ_k |f_k − ref(x_k)|^p)^{1/p}`.
pub fn error_vs_reference(cloud: &PointCloud, f: &[f64], reference: impl Fn(&[f64]) -> f64, p: f64) -> Result<f64> {
    if f.len() != cloud.len() {
        return invalid("function length differs from cloud size");
    }
    check_p(p)?;
    if f.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = cloud
        .points()
        .zip(f)
        .map(|(x, v)| (v - reference(x)).abs().powf(p))
        .sum();
    Ok((s / f.len() as f64).powf(1.0 / p))
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return invalid(format!("p must be at least 1, got {p}"));
    }
    Ok(())
}

const GOLDEN_WIDTH: f64 = 1e-10;

/// `inf_c ((1/n) Σ |f_k − c|^p)^{1/p}`, used when the limit forgets the labels.
pub fn error_degenerate(f: &[f64], p: f64) -> Result<f64> {
    check_p(p)?;
    if f.is_empty() {
        return Ok(0.0);
    }
    Ok(degenerate_fit(f, p).1)
}

/// Optimal constant and the error it achieves.
pub fn degenerate_fit(f: &[f64], p: f64) -> (f64, f64) {
    let n = f.len() as f64;
    let err = |c: f64| (f.iter().map(|v| (v - c).abs().powf(p)).sum::<f64>() / n).powf(1.0 / p);
    if p == 2.0 {
        let c = f.iter().sum::<f64>() / n;
        return (c, err(c));
    }
    let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut a, mut b) = (lo, hi);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (err(c), err(d));
    while b - a > GOLDEN_WIDTH {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = err(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = err(d);
        }
    }
    // Endpoints matter when the objective is flat (p = 1).
    [lo, hi, 0.5 * (a + b)]
        .into_iter()
        .map(|c| (c, err(c)))
        .fold((f64::NAN, f64::INFINITY), |best, x| if x.1 < best.1 { x } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::Domain;
    use proptest::prelude::*;

    fn centered(n: usize) -> PointCloud {
        let xs = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        PointCloud::new(Domain::unit(1).unwrap(), xs, vec![], 0).unwrap()
    }

    #[test]
    fn reference_error_examples() {
        let c = centered(1000);
        let f: Vec<f64> = c.coords().to_vec();
        assert_eq!(error_vs_reference(&c, &f, |x| x[0], 2.0).unwrap(), 0.0);
        let e = error_vs_reference(&c, &vec![0.0; 1000], |x| x[0], 2.0).unwrap();
        assert!((e - (1.0f64 / 3.0).sqrt()).abs() < 1e-6);
        for p in [1.0, 1.5, 4.0] {
            let shifted: Vec<f64> = f.iter().map(|v| v - 0.25).collect();
            let e = error_vs_reference(&c, &shifted, |x| x[0], p).unwrap();
            assert!((e - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_examples() {
        assert_eq!(degenerate_fit(&[0.0, 1.0], 2.0), (0.5, 0.5));
        assert_eq!(error_degenerate(&[0.3; 5], 3.0).unwrap(), 0.0);
        let (c, e) = degenerate_fit(&[0.0, 0.0, 1.0], 1.0);
        assert!(c.abs() < 1e-9);
        assert!((e - 1.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn golden_section_beats_dense_scan(
            f in proptest::collection::vec(-5.0f64..5.0, 1..20),
            p in 1.0f64..5.0,
        ) {
            let (_, e) = degenerate_fit(&f, p);
            let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let n = f.len() as f64;
            for i in 0..=400 {
                let c = lo + (hi - lo) * i as f64 / 400.0;
                let ec = (f.iter().map(|v| (v - c).abs().powf(p)).sum::<f64>() / n).powf(1.0 / p);
                prop_assert!(e <= ec + 1e-8);
            }
        }
    }
}
