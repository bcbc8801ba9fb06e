//! CSV and SVG emission for sweep results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CurvePoint, Landmarks, ScalingFit, SweepCurve, SweepRecord};
use crate::error::{Error, Result};

pub const RECORD_HEADER: [&str; 14] = [
    "n",
    "eps",
    "realization",
    "seed",
    "connected",
    "failures",
    "error",
    "energy",
    "spike_ratio",
    "sweeps_used",
    "cloud_hash",
    "eps_conn",
    "tinf_1d",
    "tlp_upper",
];

pub fn write_records(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    if records.is_empty() {
        w.write_record(RECORD_HEADER).map_err(|e| Error::csv(path, e))?;
    }
    for r in records {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SweepRecord>, _>>()
        .map_err(|e| Error::csv(path, e))
}

pub fn write_curves(path: &Path, curves: &[SweepCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let run = |w: &mut csv::Writer<fs::File>| -> csv::Result<()> {
        w.write_record(["n", "eps", "mean_err", "q10", "q90", "frac_connected", "failures"])?;
        for c in curves {
            for p in &c.points {
                w.write_record([
                    c.n.to_string(),
                    p.eps.to_string(),
                    p.mean_err.to_string(),
                    p.q10.to_string(),
                    p.q90.to_string(),
                    p.frac_connected.to_string(),
                    p.failures.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| Error::csv(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

pub fn write_landmarks(path: &Path, landmarks: &[Landmarks]) -> Result<()> {
    let mut s = String::from("n,eps_conn,eps_star,eps_upper\n");
    for l in landmarks {
        let _ = writeln!(s, "{},{},{},{}", l.n, l.eps_conn, opt(l.eps_star), opt(l.eps_upper));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Fits that could not be computed are written with `nan` entries.
pub fn write_fits(path: &Path, fits: &[(String, Result<ScalingFit>)]) -> Result<()> {
    let mut s = String::from("quantity,a,b,k\n");
    for (name, fit) in fits {
        match fit {
            Ok(f) => writeln!(s, "{name},{},{},{}", f.a, f.b, f.k),
            Err(_) => writeln!(s, "{name},nan,nan,0"),
        }
        .expect("writing to a String");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 50.0;

/// Mean error with its 10%/90% quantile band on logarithmic ε, plus
/// vertical markers at the landmarks. Returns the SVG markup.
pub fn curve_svg(curve: &SweepCurve, landmarks: Option<&Landmarks>) -> String {
    let pts: Vec<&CurvePoint> = curve.points.iter().filter(|p| p.mean_err.is_finite()).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">n = {}</text>",
        WIDTH / 2.0,
        curve.n
    );
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.eps.ln()).collect();
    let (x0, x1) = (lx[0], lx[lx.len() - 1]);
    let ys = pts
        .iter()
        .flat_map(|p| [p.q10, p.q90, p.mean_err])
        .filter(|v| v.is_finite());
    let y1 = ys.clone().fold(f64::NEG_INFINITY, f64::max);
    let y0 = ys.fold(f64::INFINITY, f64::min).min(0.0);
    let sx = |e: f64| {
        let t = if x1 > x0 { (e.ln() - x0) / (x1 - x0) } else { 0.5 };
        MARGIN + t * (WIDTH - 2.0 * MARGIN)
    };
    let sy = |v: f64| {
        let t = if y1 > y0 { (v - y0) / (y1 - y0) } else { 0.5 };
        HEIGHT - MARGIN - t * (HEIGHT - 2.0 * MARGIN)
    };
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>",
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let series: [(&str, &str, fn(&CurvePoint) -> f64); 3] = [
        ("q10", "stroke-dasharray=\"4 3\" stroke=\"#6a8fd1\"", |p| p.q10),
        ("q90", "stroke-dasharray=\"4 3\" stroke=\"#6a8fd1\"", |p| p.q90),
        ("mean_err", "stroke=\"#1f3f8f\" stroke-width=\"2\"", |p| p.mean_err),
    ];
    for (name, style, get) in series {
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| get(p).is_finite())
            .map(|p| format!("{:.2},{:.2}", sx(p.eps), sy(get(p))))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline class=\"{name}\" fill=\"none\" {style} points=\"{}\"/>",
            coords.join(" ")
        );
    }
    if let Some(l) = landmarks {
        let marks = [
            ("eps_conn", Some(l.eps_conn), "#888"),
            ("eps_star", l.eps_star, "#2a9d3a"),
            ("eps_upper", l.eps_upper, "#c0392b"),
        ];
        for (name, v, color) in marks {
            let Some(e) = v.filter(|e| e.is_finite() && *e > 0.0) else {
                continue;
            };
            if e.ln() < x0 || e.ln() > x1 {
                continue;
            }
            let x = sx(e);
            let _ = writeln!(
                svg,
                "<line class=\"{name}\" x1=\"{x:.2}\" y1=\"{MARGIN}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"{color}\"/>",
                HEIGHT - MARGIN
            );
        }
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">eps (log scale)</text>",
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Writes `records.csv`, `curves.csv`, `landmarks.csv`, `fits.csv` and,
/// when `svg` is set, `curve_n{n}.svg` per n into `dir`.
pub fn emit_outputs(
    dir: &Path,
    records: &[SweepRecord],
    curves: &[SweepCurve],
    landmarks: &[Landmarks],
    fits: &[(String, Result<ScalingFit>)],
    svg: bool,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_records(&dir.join("records.csv"), records)?;
    write_curves(&dir.join("curves.csv"), curves)?;
    write_landmarks(&dir.join("landmarks.csv"), landmarks)?;
    write_fits(&dir.join("fits.csv"), fits)?;
    if svg {
        for c in curves {
            let path = dir.join(format!("curve_n{}.svg", c.n));
            let l = landmarks.iter().find(|l| l.n == c.n);
            fs::write(&path, curve_svg(c, l)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
