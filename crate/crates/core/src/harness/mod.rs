//! ε-sweeps over realizations: solve, measure error against a continuum
//! reference, aggregate into curves and extract the bandwidth landmarks.

pub mod config;
pub mod landmarks;
pub mod metrics;
pub mod output;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuum::{
    continuum_solution_1d, solve_continuum_grid_2d, ContinuumOptions, GridFunction, PiecewiseLinear,
};
use crate::diagnostics::{spike_report, tlp_upper_1d, transport_infty_1d, DEFAULT_SPIKE_ALPHA};
use crate::energy::{improved_pin_set, PinSet};
use crate::error::{invalid, Result};
use crate::graph::{build_graph, connectivity_radius, is_connected, KernelProfile, WeightedGraph};
use crate::sampling::{sample_cloud, Density, Domain, LabeledPoint, PointCloud};
use crate::solver::{solve_constrained, solve_harmonic, solve_irls, solve_penalized, Init, SolveOptions, SolveReport};

pub use landmarks::{find_eps_star, find_eps_upper, fit_scaling, quantile, ScalingFit};
pub use metrics::{error_degenerate, error_vs_reference};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    Constrained,
    Penalized { q: f64, lambda: f64 },
    Improved { radius_multiplier: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpsGrid {
    Explicit(Vec<f64>),
    LogSpaced {
        min: f64,
        max: f64,
        count: usize,
    },
    /// Log-spaced between `lower_factor·ε_conn` and
    /// `min(upper_factor·ε_conn, cap)`, where `ε_conn` is the median
    /// connectivity radius over the realizations at each n.
    ConnRelative {
        lower_factor: f64,
        upper_factor: f64,
        cap: f64,
        count: usize,
    },
}

impl EpsGrid {
    fn resolve(&self, eps_conn: f64) -> Result<Vec<f64>> {
        let grid = match *self {
            EpsGrid::Explicit(ref v) => v.clone(),
            EpsGrid::LogSpaced { min, max, count } => log_spaced(min, max, count)?,
            EpsGrid::ConnRelative {
                lower_factor,
                upper_factor,
                cap,
                count,
            } => log_spaced(lower_factor * eps_conn, (upper_factor * eps_conn).min(cap), count)?,
        };
        if grid.is_empty() || grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return invalid("ε grid must be nonempty and positive");
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("ε grid must be strictly increasing");
        }
        Ok(grid)
    }
}

pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && count >= 2) {
        return invalid(format!("bad log-spaced range [{min}, {max}] with {count} points"));
    }
    let r = (max / min).ln();
    Ok((0..count)
        .map(|i| match i {
            0 => min,
            _ if i == count - 1 => max,
            _ => min * (r * i as f64 / (count - 1) as f64).exp(),
        })
        .collect())
}

/// What the discrete solutions are compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    /// Piecewise-linear interpolant of the labels (1D).
    Analytic1d,
    /// Grid minimizer of the continuum energy with this many cells per axis (2D).
    Grid2d { cells: usize },
    /// Best constant fit, for the regime where labels are forgotten.
    ConstantInfimum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub domain: Domain,
    pub labeled: Vec<LabeledPoint>,
    pub kernel: KernelProfile,
    pub model: Model,
    pub p: f64,
    pub ns: Vec<usize>,
    pub eps_grid: EpsGrid,
    pub realizations: usize,
    pub base_seed: u64,
    pub solve: SolveOptions,
    pub reference: Reference,
    /// Spike balls have radius `spike_alpha · ε`.
    pub spike_alpha: f64,
    pub smooth_window: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            domain: Domain::unit(1).unwrap(),
            labeled: vec![LabeledPoint::new(vec![0.0], 0.0), LabeledPoint::new(vec![1.0], 1.0)],
            kernel: KernelProfile::indicator(1.0).unwrap(),
            model: Model::Constrained,
            p: 2.0,
            ns: vec![80, 160, 320, 640, 1280],
            eps_grid: EpsGrid::ConnRelative {
                lower_factor: 0.5,
                upper_factor: f64::INFINITY,
                cap: 0.5,
                count: 40,
            },
            realizations: 20,
            base_seed: 0,
            solve: SolveOptions::default(),
            reference: Reference::Analytic1d,
            spike_alpha: DEFAULT_SPIKE_ALPHA,
            smooth_window: 3,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("n list must be nonempty and strictly increasing");
        }
        if self.ns[0] < self.labeled.len() {
            return invalid("every n must be at least the number of labeled points");
        }
        if self.realizations == 0 {
            return invalid("need at least one realization");
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return invalid(format!("p must exceed 1, got {}", self.p));
        }
        if self.labeled.is_empty() {
            return invalid("need at least one labeled point");
        }
        if self.labeled.iter().any(|l| l.position.len() != self.domain.dim()) {
            return invalid("labeled point dimension differs from the domain");
        }
        match self.eps_grid {
            EpsGrid::Explicit(_) | EpsGrid::LogSpaced { .. } => {
                self.eps_grid.resolve(f64::NAN)?;
            }
            EpsGrid::ConnRelative {
                lower_factor,
                upper_factor,
                cap,
                count,
            } => {
                if !(lower_factor > 0.0 && upper_factor > lower_factor && cap > 0.0 && count >= 2) {
                    return invalid("bad connectivity-relative ε grid");
                }
            }
        }
        if !(self.spike_alpha > 0.0) {
            return invalid("spike_alpha must be positive");
        }
        if self.smooth_window.is_multiple_of(2) {
            return invalid("smoothing window must be odd");
        }
        match self.model {
            Model::Penalized { q, lambda } if !(q > 1.0 && lambda >= 0.0) => {
                return invalid("penalized model needs q > 1 and lambda ≥ 0");
            }
            Model::Improved { radius_multiplier } if !(radius_multiplier > 0.0) => {
                return invalid("radius multiplier must be positive");
            }
            _ => {}
        }
        match (self.reference, self.domain.dim()) {
            (Reference::Analytic1d, 1) | (Reference::Grid2d { .. }, 2) | (Reference::ConstantInfimum, _) => Ok(()),
            _ => invalid("reference does not match the domain dimension"),
        }
    }
}

/// One solve at one `(n, ε, realization)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub n: usize,
    pub eps: f64,
    pub realization: usize,
    pub seed: u64,
    pub connected: bool,
    /// 1 when the solve failed; `error` and `energy` are then NaN.
    pub failures: usize,
    pub error: f64,
    pub energy: f64,
    pub spike_ratio: f64,
    pub sweeps_used: usize,
    pub cloud_hash: u64,
    pub eps_conn: f64,
    pub tinf_1d: f64,
    pub tlp_upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub eps: f64,
    pub mean_err: f64,
    pub q10: f64,
    pub q90: f64,
    pub frac_connected: f64,
    pub failures: usize,
}

/// Aggregated error curve over realizations at one n.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub n: usize,
    pub points: Vec<CurvePoint>,
}

impl SweepCurve {
    pub fn eps(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.eps).collect()
    }

    pub fn mean_err(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_err).collect()
    }
}

/// Bandwidth landmarks at one n.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks {
    pub n: usize,
    /// Mean connectivity radius over realizations.
    pub eps_conn: f64,
    pub eps_star: Option<f64>,
    pub eps_upper: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub curves: Vec<SweepCurve>,
    pub landmarks: Vec<Landmarks>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of realization `r` at size `n`; independent of ε.
pub fn realization_seed(base: u64, n: usize, r: usize) -> u64 {
    base ^ splitmix64(splitmix64(n as u64) ^ r as u64)
}

enum RefFn {
    Analytic(PiecewiseLinear),
    Grid(GridFunction),
    Constant,
}

impl RefFn {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RefFn::Analytic(f) => f.eval(x[0]),
            // Sample points always lie in the grid box.
            RefFn::Grid(g) => g.interpolate(x).unwrap_or(f64::NAN),
            RefFn::Constant => f64::NAN,
        }
    }
}

fn build_reference(config: &SweepConfig) -> Result<RefFn> {
    Ok(match config.reference {
        Reference::Analytic1d => RefFn::Analytic(continuum_solution_1d(&config.labeled)?),
        Reference::Grid2d { cells } => RefFn::Grid(
            solve_continuum_grid_2d(
                &config.domain,
                &config.labeled,
                config.p,
                cells,
                &ContinuumOptions::default(),
            )?
            .grid,
        ),
        Reference::ConstantInfimum => RefFn::Constant,
    })
}

/// Solves the configured model on one graph. Every model starts from the
/// `p = 2` solution with the same pins; for `p < 2` that is refined by
/// reweighted least squares, and coordinate sweeps finish any model the
/// reweighting does not cover.
pub fn solve_model(graph: &WeightedGraph, model: Model, p: f64, opts: &SolveOptions) -> Result<SolveReport> {
    let cloud = graph.cloud();
    let pins = match model {
        Model::Improved { radius_multiplier } => improved_pin_set(cloud, graph.eps(), radius_multiplier)?,
        _ => PinSet::from_labels(cloud),
    };
    let mut start = solve_harmonic(graph, &pins, opts)?;
    if p == 2.0 && !matches!(model, Model::Penalized { .. }) {
        return Ok(start);
    }
    let warm = |r: SolveReport| SolveOptions {
        init: Init::WarmStart(r.solution),
        ..opts.clone()
    };
    if p < 2.0 {
        start = solve_irls(graph, &pins, p, &warm(start))?;
    }
    match model {
        Model::Constrained | Model::Improved { .. } if p < 2.0 => Ok(start),
        Model::Constrained | Model::Improved { .. } => solve_constrained(graph, &pins, p, &warm(start)),
        Model::Penalized { q, lambda } => solve_penalized(graph, &pins, p, q, lambda, &warm(start)),
    }
}

fn one_record(
    config: &SweepConfig,
    reference: &RefFn,
    cloud: &std::sync::Arc<PointCloud>,
    eps: f64,
    base: &SweepRecord,
) -> SweepRecord {
    let mut rec = SweepRecord { eps, ..base.clone() };
    let failed = |mut rec: SweepRecord| {
        rec.failures = 1;
        rec.error = f64::NAN;
        rec.energy = f64::NAN;
        rec.spike_ratio = f64::NAN;
        rec.tlp_upper = f64::NAN;
        rec
    };
    let graph = match build_graph(cloud.clone(), &config.kernel, eps) {
        Ok(g) => g,
        Err(_) => return failed(rec),
    };
    rec.connected = is_connected(&graph);
    let report = match solve_model(&graph, config.model, config.p, &config.solve) {
        Ok(r) => r,
        Err(_) => return failed(rec),
    };
    let f = report.solution.values();
    let error = match reference {
        RefFn::Constant => error_degenerate(f, config.p),
        r => error_vs_reference(cloud, f, |x| r.eval(x), config.p),
    };
    let Ok(error) = error else { return failed(rec) };
    rec.error = error;
    rec.energy = report.final_energy;
    rec.sweeps_used = report.sweeps_used;
    rec.spike_ratio = spike_report(cloud, f, eps, config.spike_alpha)
        .map(|s| s.spike_ratio)
        .unwrap_or(f64::NAN);
    if let RefFn::Analytic(g) = reference {
        rec.tlp_upper = tlp_upper_1d(cloud, f, |x| g.eval(x), config.p).unwrap_or(f64::NAN);
    }
    rec
}

/// Runs every `(n, ε, realization)` solve. The cloud of a realization
/// depends on `(n, r)` only and is reused across the ε grid; records come
/// back sorted by `(n, ε, realization)` whatever the thread count.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutput> {
    config.validate()?;
    let reference = build_reference(config)?;
    let transport = config.domain.dim() == 1 && matches!(config.domain.density(), Density::Uniform);
    let mut records = Vec::new();
    for &n in &config.ns {
        let clouds: Vec<(u64, std::sync::Arc<PointCloud>, f64)> = (0..config.realizations)
            .into_par_iter()
            .map(|r| {
                let seed = realization_seed(config.base_seed, n, r);
                let cloud = sample_cloud(&config.domain, &config.labeled, n, seed)?;
                let conn = connectivity_radius(&cloud, &config.kernel)?;
                Ok((seed, std::sync::Arc::new(cloud), conn))
            })
            .collect::<Result<_>>()?;
        let mut conns: Vec<f64> = clouds.iter().map(|c| c.2).collect();
        conns.sort_by(f64::total_cmp);
        let grid = config.eps_grid.resolve(quantile(&conns, 0.5))?;
        let per_cloud: Vec<Vec<SweepRecord>> = clouds
            .par_iter()
            .enumerate()
            .map(|(r, (seed, cloud, conn))| {
                let base = SweepRecord {
                    n,
                    eps: f64::NAN,
                    realization: r,
                    seed: *seed,
                    connected: false,
                    failures: 0,
                    error: f64::NAN,
                    energy: f64::NAN,
                    spike_ratio: f64::NAN,
                    sweeps_used: 0,
                    cloud_hash: cloud.content_hash(),
                    eps_conn: *conn,
                    tinf_1d: if transport {
                        transport_infty_1d(cloud).unwrap_or(f64::NAN)
                    } else {
                        f64::NAN
                    },
                    tlp_upper: f64::NAN,
                };
                grid.par_iter()
                    .map(|&eps| one_record(config, &reference, cloud, eps, &base))
                    .collect()
            })
            .collect();
        records.extend(per_cloud.into_iter().flatten());
    }
    sort_records(&mut records);
    let curves = aggregate(&records);
    let landmarks = find_landmarks(&records, &curves, config.smooth_window);
    Ok(SweepOutput {
        records,
        curves,
        landmarks,
    })
}

pub fn sort_records(records: &mut [SweepRecord]) {
    records.sort_by(|a, b| {
        a.n.cmp(&b.n)
            .then(a.eps.total_cmp(&b.eps))
            .then(a.realization.cmp(&b.realization))
    });
}

/// Mean, 10%/90% quantiles and connected fraction per `(n, ε)`. Failed
/// records are counted but excluded from the statistics.
pub fn aggregate(records: &[SweepRecord]) -> Vec<SweepCurve> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut curves: Vec<SweepCurve> = Vec::new();
    for group in sorted.chunk_by(|a, b| a.n == b.n && a.eps == b.eps) {
        let mut errs: Vec<f64> = group.iter().map(|r| r.error).filter(|e| !e.is_nan()).collect();
        errs.sort_by(f64::total_cmp);
        let failures = group.iter().map(|r| r.failures).sum();
        let (mean_err, q10, q90) = if errs.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (
                errs.iter().sum::<f64>() / errs.len() as f64,
                quantile(&errs, 0.1),
                quantile(&errs, 0.9),
            )
        };
        let point = CurvePoint {
            eps: group[0].eps,
            mean_err,
            q10,
            q90,
            frac_connected: group.iter().filter(|r| r.connected).count() as f64 / group.len() as f64,
            failures,
        };
        match curves.last_mut() {
            Some(c) if c.n == group[0].n => c.points.push(point),
            _ => curves.push(SweepCurve {
                n: group[0].n,
                points: vec![point],
            }),
        }
    }
    curves
}

/// ε_conn (mean over realizations), ε* and ε_upper for every curve. A
/// landmark that cannot be located is left empty.
pub fn find_landmarks(records: &[SweepRecord], curves: &[SweepCurve], window: usize) -> Vec<Landmarks> {
    curves
        .iter()
        .map(|c| {
            let mut conn: Vec<(usize, f64)> = records
                .iter()
                .filter(|r| r.n == c.n)
                .map(|r| (r.realization, r.eps_conn))
                .collect();
            conn.sort_by_key(|a| a.0);
            conn.dedup_by_key(|x| x.0);
            let eps_conn = conn.iter().map(|x| x.1).sum::<f64>() / conn.len().max(1) as f64;
            let eps = c.eps();
            let err = c.mean_err();
            let eps_star = find_eps_star(&eps, &err).ok();
            let eps_upper = eps_star.and_then(|s| find_eps_upper(&eps, &err, s, window).ok());
            Landmarks {
                n: c.n,
                eps_conn,
                eps_star,
                eps_upper,
            }
        })
        .collect()
}

/// Power-law fits of each landmark over n, using the `k` largest n at
/// which the landmark exists.
pub fn fit_landmarks(landmarks: &[Landmarks], k: usize) -> Vec<(String, Result<ScalingFit>)> {
    let series: [(&str, fn(&Landmarks) -> Option<f64>); 3] = [
        ("eps_conn", |l| Some(l.eps_conn)),
        ("eps_star", |l| l.eps_star),
        ("eps_upper", |l| l.eps_upper),
    ];
    series
        .iter()
        .map(|(name, get)| {
            let (ns, vals): (Vec<usize>, Vec<f64>) = landmarks.iter().filter_map(|l| get(l).map(|v| (l.n, v))).unzip();
            (name.to_string(), fit_scaling(&ns, &vals, k))
        })
        .collect()
}
