//! Minimizers of the constrained, penalized and improved objectives.
//!
//! The nonlinear solvers are Gauss–Seidel coordinate descent: every sweep
//! visits the movable nodes in ascending index order and replaces each value
//! by the exact minimizer of the objective in that coordinate. For `p = 2`
//! the constrained problem is linear and [`solve_p2_exact`] solves it with
//! preconditioned conjugate gradients.

use crate::energy::{dirichlet_energy_unchecked, energy_scale, improved_pin_set, NodeFunction, PinSet};
use crate::envelope::Envelope;
use crate::error::{invalid, Error, Result};
use crate::graph::{is_connected, WeightedGraph};
use crate::power::Power;

/// Starting point of the coordinate sweeps.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zeros,
    /// Constant at the mean of the labels.
    LabelMean,
    WarmStart(NodeFunction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub max_sweeps: usize,
    /// Stop once a sweep lowers the objective by less than this fraction.
    pub rel_energy_tol: f64,
    /// Bracket width at which a single coordinate solve stops.
    pub coord_tol: f64,
    pub init: Init,
    /// Clamp movable values into `[min y, max y]` after every sweep.
    pub clip_to_labels: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_sweeps: 10_000,
            rel_energy_tol: 1e-10,
            coord_tol: 1e-12,
            init: Init::LabelMean,
            clip_to_labels: true,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return invalid("max_sweeps must be at least 1");
        }
        if !(self.rel_energy_tol > 0.0 && self.coord_tol > 0.0) {
            return invalid("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: NodeFunction,
    pub final_energy: f64,
    /// Coordinate sweeps, or conjugate-gradient iterations for the exact solver.
    pub sweeps_used: usize,
    pub converged: bool,
    pub graph_connected: bool,
    /// Objective after initialization followed by its value after each sweep.
    pub energy_history: Vec<f64>,
}

/// Result of a single coordinate minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateUpdate {
    pub value: f64,
    /// The node has no neighbors; `value` is the unchanged input.
    pub isolated: bool,
}

/// `argmin_t Σ_j W_kj |t - f_j|^p` over the neighbors of `k`.
pub fn coordinate_update(
    graph: &WeightedGraph,
    f: &[f64],
    k: usize,
    p: f64,
    coord_tol: f64,
) -> Result<CoordinateUpdate> {
    if !(p > 1.0) {
        return Err(Error::Unsupported(format!("coordinate descent needs p > 1, got {p}")));
    }
    if f.len() != graph.len() || k >= f.len() {
        return invalid("node index or function length does not match the graph");
    }
    let nb = graph.neighbors(k);
    if nb.is_empty() {
        return Ok(CoordinateUpdate {
            value: f[k],
            isolated: true,
        });
    }
    let local = Local {
        neighbors: nb,
        f,
        pw: Power::new(p),
        scale: 1.0,
        penalty: None,
    };
    Ok(CoordinateUpdate {
        value: local.argmin(f[k], coord_tol),
        isolated: false,
    })
}

/// The objective restricted to one coordinate:
/// `scale·Σ_j w_j |t - f_j|^p + λ|t - y|^q`.
struct Local<'a> {
    neighbors: &'a [(usize, f64)],
    f: &'a [f64],
    pw: Power,
    scale: f64,
    /// `(y, λ, q)`
    penalty: Option<(f64, f64, Power)>,
}

impl Local<'_> {
    fn value(&self, t: f64) -> f64 {
        let s: f64 = self
            .neighbors
            .iter()
            .map(|&(j, w)| w * self.pw.abs_pow(t - self.f[j]))
            .sum();
        let mut v = self.scale * s;
        if let Some((y, lambda, q)) = self.penalty {
            v += lambda * q.abs_pow(t - y);
        }
        v
    }

    /// Derivative (up to the positive factor `p`) and its slope.
    fn derivative(&self, t: f64) -> (f64, f64) {
        let (mut d, mut dd) = (0.0, 0.0);
        for &(j, w) in self.neighbors {
            let r = t - self.f[j];
            d += w * self.pw.signed_pow_m1(r);
            dd += w * self.pw.second(r);
        }
        let p = self.pw.value();
        let (mut d, mut dd) = (self.scale * p * d, self.scale * p * dd);
        if let Some((y, lambda, q)) = self.penalty {
            d += lambda * q.value() * q.signed_pow_m1(t - y);
            dd += lambda * q.value() * q.second(t - y);
        }
        (d, dd)
    }

    fn bracket(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(j, _) in self.neighbors {
            lo = lo.min(self.f[j]);
            hi = hi.max(self.f[j]);
        }
        if let Some((y, _, _)) = self.penalty {
            lo = lo.min(y);
            hi = hi.max(y);
        }
        (lo, hi)
    }

    /// Zero of the increasing derivative on the hull of the anchor values,
    /// by bisection accelerated with safeguarded Newton steps.
    fn argmin(&self, start: f64, tol: f64) -> f64 {
        if let (Power::Two, None) = (self.pw, self.penalty) {
            let (mut num, mut den) = (0.0, 0.0);
            for &(j, w) in self.neighbors {
                num += w * self.f[j];
                den += w;
            }
            return num / den;
        }
        let (mut lo, mut hi) = self.bracket();
        if hi - lo <= tol {
            return 0.5 * (lo + hi);
        }
        let mut t = start.clamp(lo, hi);
        for _ in 0..200 {
            let (d, dd) = self.derivative(t);
            if d == 0.0 {
                return t;
            }
            if d > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            if hi - lo <= tol {
                break;
            }
            let newton = t - d / dd;
            if dd.is_finite() && dd > 0.0 && newton > lo && newton < hi {
                if (newton - t).abs() <= 0.25 * tol {
                    return newton;
                }
                t = newton;
            } else {
                t = 0.5 * (lo + hi);
            }
        }
        0.5 * (lo + hi)
    }
}

fn label_mean(pins: &PinSet) -> f64 {
    if pins.is_empty() {
        0.0
    } else {
        pins.iter().map(|(_, y)| y).sum::<f64>() / pins.len() as f64
    }
}

fn initial_values(graph: &WeightedGraph, pins: &PinSet, init: &Init) -> Result<Vec<f64>> {
    let n = graph.len();
    match init {
        Init::Zeros => Ok(vec![0.0; n]),
        Init::LabelMean => Ok(vec![label_mean(pins); n]),
        Init::WarmStart(f) => {
            if f.len() != n {
                return invalid(format!("warm start has {} values for {n} nodes", f.len()));
            }
            Ok(f.values().to_vec())
        }
    }
}

/// Nodes in components that contain no pin; they keep their initial value.
fn pin_free_nodes(graph: &WeightedGraph, pins: &PinSet) -> Vec<bool> {
    let comp = graph.components();
    let ncomp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut has_pin = vec![false; ncomp];
    for (k, _) in pins.iter() {
        has_pin[comp[k]] = true;
    }
    comp.iter().map(|&c| !has_pin[c]).collect()
}

enum Model<'a> {
    Constrained,
    Penalized { lambda: f64, q: Power, pins: &'a PinSet },
}

fn coordinate_descent(
    graph: &WeightedGraph,
    pins: &PinSet,
    p: f64,
    opts: &SolveOptions,
    model: Model,
) -> Result<SolveReport> {
    opts.validate()?;
    pins.check_range(graph.len())?;
    let n = graph.len();
    let pw = Power::new(p);
    let mut f = initial_values(graph, pins, &opts.init)?;
    let frozen = pin_free_nodes(graph, pins);
    let hard = matches!(model, Model::Constrained);
    let mut movable = vec![true; n];
    for k in 0..n {
        movable[k] = !frozen[k] && !graph.neighbors(k).is_empty();
    }
    let mut penalty_at = vec![None; n];
    match &model {
        Model::Constrained => {
            for (k, y) in pins.iter() {
                f[k] = y;
                movable[k] = false;
            }
        }
        Model::Penalized { lambda, q, pins } => {
            for (k, y) in pins.iter() {
                penalty_at[k] = Some((y, *lambda, *q));
                // A labeled node without neighbors minimizes λ|t - y|^q alone.
                if graph.neighbors(k).is_empty() && *lambda > 0.0 {
                    f[k] = y;
                }
            }
        }
    }
    let range = pins.value_range();
    let objective = |f: &[f64]| -> f64 {
        let e = dirichlet_energy_unchecked(graph, f, pw);
        match &model {
            Model::Constrained => e,
            Model::Penalized { lambda, q, pins } => {
                if *lambda == 0.0 {
                    e
                } else {
                    e + lambda * pins.iter().map(|(k, y)| q.abs_pow(y - f[k])).sum::<f64>()
                }
            }
        }
    };
    let clip = |f: &mut [f64]| {
        if let (true, Some((lo, hi))) = (opts.clip_to_labels, range) {
            for k in 0..n {
                if movable[k] {
                    f[k] = f[k].clamp(lo, hi);
                }
            }
        }
    };
    clip(&mut f);
    let scale = 2.0 * energy_scale(graph, p);
    let mut energy = objective(&f);
    let mut history = vec![energy];
    let mut sweeps = 0;
    let mut converged = !movable.iter().any(|&m| m);
    while !converged && sweeps < opts.max_sweeps {
        for k in 0..n {
            if !movable[k] {
                continue;
            }
            let local = Local {
                neighbors: graph.neighbors(k),
                f: &f,
                pw,
                scale,
                penalty: if hard { None } else { penalty_at[k] },
            };
            let old = f[k];
            let t = local.argmin(old, opts.coord_tol);
            let accept = match (pw, local.penalty) {
                (Power::Two, None) => true,
                _ => t != old && local.value(t) <= local.value(old),
            };
            if accept {
                f[k] = t;
            }
        }
        clip(&mut f);
        sweeps += 1;
        let next = objective(&f);
        let decrease = energy - next;
        history.push(next);
        converged = next == 0.0 || decrease <= opts.rel_energy_tol * energy;
        energy = next;
    }
    Ok(SolveReport {
        solution: NodeFunction::from(f),
        final_energy: energy,
        sweeps_used: sweeps,
        converged,
        graph_connected: is_connected(graph),
        energy_history: history,
    })
}

/// Minimizes the Dirichlet energy subject to the pins.
///
/// Components of a disconnected graph that carry no pin keep their initial
/// values; the report flags the disconnection.
pub fn solve_constrained(graph: &WeightedGraph, pins: &PinSet, p: f64, opts: &SolveOptions) -> Result<SolveReport> {
    if pins.is_empty() {
        return invalid("constrained solve needs at least one pin");
    }
    if !(p > 1.0) {
        return Err(Error::Unsupported(format!("coordinate descent needs p > 1, got {p}")));
    }
    coordinate_descent(graph, pins, p, opts, Model::Constrained)
}

/// Minimizes `E_n(f) + λ Σ |y_i - f(x_i)|^q`.
pub fn solve_penalized(
    graph: &WeightedGraph,
    pins: &PinSet,
    p: f64,
    q: f64,
    lambda: f64,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    if !(p > 1.0) {
        return Err(Error::Unsupported(format!("coordinate descent needs p > 1, got {p}")));
    }
    if !(q > 1.0) {
        return Err(Error::Unsupported(format!("penalty exponent q must exceed 1, got {q}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be finite and nonnegative, got {lambda}"));
    }
    coordinate_descent(
        graph,
        pins,
        p,
        opts,
        Model::Penalized {
            lambda,
            q: Power::new(q),
            pins,
        },
    )
}

/// Constrained solve with every node within `min(multiplier·ε, L)` of a
/// label pinned to that label.
pub fn solve_improved(
    graph: &WeightedGraph,
    radius_multiplier: f64,
    p: f64,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let pins = improved_pin_set(graph.cloud(), graph.eps(), radius_multiplier)?;
    solve_constrained(graph, &pins, p, opts)
}

const CG_REL_RESIDUAL: f64 = 1e-12;
const MAX_CG_RESTARTS: usize = 5;
const IRLS_CG_RESIDUAL: f64 = 1e-10;
const IRLS_DELTA_START: f64 = 1e-2;
const IRLS_DELTA_FLOOR: f64 = 1e-7;
/// Relative decrease at which an intermediate smoothing stage ends.
const IRLS_STAGE_TOL: f64 = 1e-4;
/// A direct factorization is used when it costs less than this many CG
/// iterations.
const DIRECT_CG_ITERATIONS: f64 = 200.0;
const DIRECT_MAX_STORAGE: usize = 50_000_000;

/// Exact `p = 2` constrained minimizer: `(L f)_k = 0` at every free node.
///
/// Fails with [`Error::SingularSystem`] when some component has free nodes
/// but no pin.
pub fn solve_p2_exact(graph: &WeightedGraph, pins: &PinSet) -> Result<SolveReport> {
    if pins.is_empty() {
        return invalid("exact solve needs at least one pin");
    }
    pins.check_range(graph.len())?;
    let comp = graph.components();
    let frozen = pin_free_nodes(graph, pins);
    if let Some(k) = frozen.iter().position(|&z| z) {
        let size = comp.iter().filter(|&&c| c == comp[k]).count();
        return Err(Error::SingularSystem {
            component: comp[k],
            size,
            first: k,
        });
    }
    harmonic(graph, pins, vec![0.0; graph.len()], &frozen)
}

/// `p = 2` constrained solve with the semantics of [`solve_constrained`]:
/// pin-free components keep their initial values instead of failing.
pub fn solve_harmonic(graph: &WeightedGraph, pins: &PinSet, opts: &SolveOptions) -> Result<SolveReport> {
    if pins.is_empty() {
        return invalid("constrained solve needs at least one pin");
    }
    pins.check_range(graph.len())?;
    let init = initial_values(graph, pins, &opts.init)?;
    let frozen = pin_free_nodes(graph, pins);
    harmonic(graph, pins, init, &frozen)
}

/// Constrained minimizer for `1 < p < 2` by iteratively reweighted least
/// squares on the smoothed energy `Σ W_ij (|f_i - f_j|² + δ²)^{p/2}`, with `δ`
/// shrunk geometrically to a negligible fraction of the label range.
///
/// Coordinate descent stalls in this regime: neighbors that share a value
/// make the coordinate objective infinitely curved, so the sweeps lock up
/// long before the minimum. Each reweighted step here is a linear solve that
/// lowers the smoothed energy, so the iteration cannot lock. `max_sweeps`
/// bounds the total number of reweighted solves, and the energy history has
/// one entry per smoothing level.
pub fn solve_irls(graph: &WeightedGraph, pins: &PinSet, p: f64, opts: &SolveOptions) -> Result<SolveReport> {
    opts.validate()?;
    if pins.is_empty() {
        return invalid("constrained solve needs at least one pin");
    }
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::Unsupported(format!(
            "reweighted solve needs 1 < p <= 2, got {p}"
        )));
    }
    pins.check_range(graph.len())?;
    let n = graph.len();
    let pw = Power::new(p);
    let frozen = pin_free_nodes(graph, pins);
    let mut f = initial_values(graph, pins, &opts.init)?;
    for (k, y) in pins.iter() {
        f[k] = y;
    }
    let span = pins.value_range().map_or(0.0, |(lo, hi)| hi - lo);
    let mut history = vec![dirichlet_energy_unchecked(graph, &f, pw)];
    if span == 0.0 || p == 2.0 {
        let mut r = harmonic(graph, pins, f, &frozen)?;
        r.energy_history = history;
        r.energy_history.push(r.final_energy);
        return Ok(r);
    }
    let system = ReducedSystem::new(graph, pins, &frozen);
    let delta_min = IRLS_DELTA_FLOOR * span;
    let mut delta = IRLS_DELTA_START * span;
    let mut weights = Vec::new();
    let mut solves = 0;
    let mut converged = false;
    // Fills the reweighting for the current iterate and returns the smoothed
    // energy there, both from a single pass over the edges.
    let reweight = |f: &[f64], delta: f64, weights: &mut Vec<f64>| -> f64 {
        weights.clear();
        let mut total = 0.0;
        for k in 0..n {
            for &(j, w) in graph.neighbors(k) {
                let d = f[k] - f[j];
                let s = d * d + delta * delta;
                let c = w * s.powf(0.5 * p - 1.0);
                weights.push(c);
                total += c * s;
            }
        }
        total
    };
    // Smoothed energy before the last solve at the current δ.
    let mut before: Option<f64> = None;
    loop {
        let current = reweight(&f, delta, &mut weights);
        if let Some(b) = before {
            let tol = if delta <= delta_min {
                opts.rel_energy_tol
            } else {
                IRLS_STAGE_TOL
            };
            if b - current <= tol * b {
                history.push(dirichlet_energy_unchecked(graph, &f, pw));
                if delta <= delta_min {
                    converged = true;
                    break;
                }
                delta = (0.1 * delta).max(delta_min);
                before = None;
                continue;
            }
        }
        if solves == opts.max_sweeps {
            break;
        }
        before = Some(current);
        let (next, _, _) = system.solve(&weights, f, IRLS_CG_RESIDUAL);
        f = next;
        solves += 1;
    }
    let mut energy = dirichlet_energy_unchecked(graph, &f, pw);
    if let (true, Some((lo, hi))) = (opts.clip_to_labels, pins.value_range()) {
        for k in 0..n {
            if !frozen[k] {
                f[k] = f[k].clamp(lo, hi);
            }
        }
        energy = dirichlet_energy_unchecked(graph, &f, pw);
    }
    Ok(SolveReport {
        solution: NodeFunction::from(f),
        final_energy: energy,
        sweeps_used: solves,
        converged,
        graph_connected: is_connected(graph),
        energy_history: history,
    })
}

fn harmonic(graph: &WeightedGraph, pins: &PinSet, f: Vec<f64>, frozen: &[bool]) -> Result<SolveReport> {
    let weights: Vec<f64> = (0..graph.len())
        .flat_map(|k| graph.neighbors(k).iter().map(|&(_, w)| w))
        .collect();
    let (f, iters, converged) = ReducedSystem::new(graph, pins, frozen).solve(&weights, f, CG_REL_RESIDUAL);
    let energy = dirichlet_energy_unchecked(graph, &f, Power::Two);
    Ok(SolveReport {
        solution: NodeFunction::from(f),
        final_energy: energy,
        sweeps_used: iters,
        converged,
        graph_connected: is_connected(graph),
        energy_history: vec![energy],
    })
}

/// Weighted Laplacian restricted to the free nodes, with edge weights given
/// per neighbor-list entry. Small-profile systems are factored directly;
/// the rest go through Jacobi-preconditioned CG.
struct ReducedSystem<'a> {
    graph: &'a WeightedGraph,
    pins: Vec<(usize, f64)>,
    free: Vec<bool>,
    /// Row offsets of each node's neighbor list in the flat weight vector.
    start: Vec<usize>,
    /// Compact index of each free node.
    index: Vec<usize>,
    envelope: Option<Envelope>,
}

impl<'a> ReducedSystem<'a> {
    fn new(graph: &'a WeightedGraph, pins: &PinSet, frozen: &[bool]) -> Self {
        let n = graph.len();
        let mut free: Vec<bool> = frozen.iter().map(|&z| !z).collect();
        for (k, _) in pins.iter() {
            free[k] = false;
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for k in 0..n {
            start.push(start[k] + graph.neighbors(k).len());
        }
        let mut index = vec![usize::MAX; n];
        let mut m = 0;
        for k in 0..n {
            if free[k] {
                index[k] = m;
                m += 1;
            }
        }
        let mut adj = vec![Vec::new(); m];
        let mut nnz = 0;
        for k in 0..n {
            if free[k] {
                adj[index[k]].extend(
                    graph
                        .neighbors(k)
                        .iter()
                        .filter(|&&(j, _)| free[j])
                        .map(|&(j, _)| index[j]),
                );
                nnz += adj[index[k]].len();
            }
        }
        let env = Envelope::new(&adj);
        let cg_work = DIRECT_CG_ITERATIONS * (nnz + m) as f64;
        let envelope = (env.factor_cost() <= cg_work && env.storage() <= DIRECT_MAX_STORAGE).then_some(env);
        ReducedSystem {
            graph,
            pins: pins.iter().collect(),
            free,
            start,
            index,
            envelope,
        }
    }

    fn row<'w>(&self, weights: &'w [f64], k: usize) -> impl Iterator<Item = (usize, f64)> + use<'a, 'w> {
        let g: &'a WeightedGraph = self.graph;
        g.neighbors(k)
            .iter()
            .map(|&(j, _)| j)
            .zip(weights[self.start[k]..self.start[k + 1]].iter().copied())
    }

    /// Minimizes `Σ weights_kj (f_k - f_j)²` over the free entries of `f`,
    /// holding the rest. Returns the solution, the CG iteration count (zero
    /// for a direct solve) and whether the residual target was met.
    fn solve(&self, weights: &[f64], mut f: Vec<f64>, rel_residual: f64) -> (Vec<f64>, usize, bool) {
        for &(k, y) in &self.pins {
            f[k] = y;
        }
        if let Some(x) = self.direct(weights, &f) {
            for k in 0..f.len() {
                if self.free[k] {
                    f[k] = x[self.index[k]];
                }
            }
            return (f, 0, true);
        }
        self.cg(weights, f, rel_residual)
    }

    fn direct(&self, weights: &[f64], f: &[f64]) -> Option<Vec<f64>> {
        let env = self.envelope.as_ref()?;
        let nodes: Vec<usize> = (0..f.len()).filter(|&k| self.free[k]).collect();
        let mut diag = vec![0.0; nodes.len()];
        let mut b = vec![0.0; nodes.len()];
        for (i, &k) in nodes.iter().enumerate() {
            for (j, w) in self.row(weights, k) {
                diag[i] += w;
                if !self.free[j] {
                    b[i] += w * f[j];
                }
            }
        }
        let fac = env.factor(&diag, |i, push| {
            for (j, w) in self.row(weights, nodes[i]) {
                if self.free[j] {
                    push(self.index[j], -w);
                }
            }
        })?;
        Some(fac.solve(&b))
    }

    fn cg(&self, weights: &[f64], mut f: Vec<f64>, rel_residual: f64) -> (Vec<f64>, usize, bool) {
        let n = f.len();
        let free = &self.free;
        let degree: Vec<f64> = (0..n).map(|k| self.row(weights, k).map(|(_, w)| w).sum()).collect();
        // Right-hand side: pinned neighbors moved across.
        let mut b = vec![0.0; n];
        for k in 0..n {
            if free[k] {
                b[k] = self
                    .row(weights, k)
                    .filter(|&(j, _)| !free[j])
                    .map(|(j, w)| w * f[j])
                    .sum();
            }
        }
        let apply = |x: &[f64], out: &mut [f64]| {
            for k in 0..n {
                out[k] = if free[k] {
                    let s: f64 = self
                        .row(weights, k)
                        .filter(|&(j, _)| free[j])
                        .map(|(j, w)| w * x[j])
                        .sum();
                    degree[k] * x[k] - s
                } else {
                    0.0
                };
            }
        };
        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        let mut x: Vec<f64> = (0..n).map(|k| if free[k] { f[k] } else { 0.0 }).collect();
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        let mut r: Vec<f64> = (0..n).map(|k| b[k] - ax[k]).collect();
        let precond = |r: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|k| {
                    if free[k] && degree[k] > 0.0 {
                        r[k] / degree[k]
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let b_norm = dot(&b, &b).sqrt();
        let target = rel_residual * b_norm.max(f64::MIN_POSITIVE);
        let mut z = precond(&r);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        let mut iters = 0;
        let max_iters = 20 * n + 1000;
        let mut converged = dot(&r, &r).sqrt() <= target;
        let mut ad = vec![0.0; n];
        let mut restarts = 0;
        let mut last_restart_norm = f64::INFINITY;
        while !converged && iters < max_iters {
            apply(&d, &mut ad);
            let dad = dot(&d, &ad);
            if !(dad > 0.0) {
                break;
            }
            let alpha = rz / dad;
            for k in 0..n {
                x[k] += alpha * d[k];
                r[k] -= alpha * ad[k];
            }
            iters += 1;
            if dot(&r, &r).sqrt() <= target {
                // Confirm against the true residual before stopping; if rounding
                // has let the recursive residual drift, restart from the true one.
                apply(&x, &mut ax);
                for k in 0..n {
                    r[k] = b[k] - ax[k];
                }
                let true_norm = dot(&r, &r).sqrt();
                if true_norm <= target {
                    converged = true;
                    break;
                }
                restarts += 1;
                if restarts > MAX_CG_RESTARTS || true_norm >= last_restart_norm {
                    break;
                }
                last_restart_norm = true_norm;
                z = precond(&r);
                rz = dot(&r, &z);
                d.copy_from_slice(&z);
                continue;
            }
            z = precond(&r);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for k in 0..n {
                d[k] = z[k] + beta * d[k];
            }
        }
        for k in 0..n {
            if free[k] {
                f[k] = x[k];
            }
        }
        (f, iters, converged)
    }
}

/// `max_k |(L f)_k|` over nodes that are neither pinned nor in a pin-free
/// component.
pub fn laplacian_residual(graph: &WeightedGraph, pins: &PinSet, f: &[f64]) -> f64 {
    let frozen = pin_free_nodes(graph, pins);
    (0..graph.len())
        .filter(|&k| !frozen[k] && pins.get(k).is_none())
        .map(|k| {
            let s: f64 = graph.neighbors(k).iter().map(|&(j, w)| w * (f[k] - f[j])).sum();
            s.abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{dirichlet_energy, penalized_objective};
    use crate::graph::{build_graph, KernelProfile};
    use crate::sampling::{sample_cloud, Domain, LabeledPoint, PointCloud};
    use std::sync::Arc;

    fn ind() -> KernelProfile {
        KernelProfile::indicator(1.0).unwrap()
    }

    fn path_graph() -> WeightedGraph {
        let d = Domain::unit(1).unwrap();
        let c = PointCloud::new(d, vec![0.0, 1.0, 0.5], vec![0.0, 1.0], 0).unwrap();
        build_graph(c, &ind(), 0.6).unwrap()
    }

    fn endpoint_labels() -> Vec<LabeledPoint> {
        vec![LabeledPoint::new(vec![0.0], 0.0), LabeledPoint::new(vec![1.0], 1.0)]
    }

    fn random_graph(n: usize, dim: usize, eps: f64, seed: u64) -> WeightedGraph {
        let labeled = if dim == 1 {
            endpoint_labels()
        } else {
            vec![
                LabeledPoint::new(vec![0.2, 0.5], 0.0),
                LabeledPoint::new(vec![0.8, 0.5], 1.0),
            ]
        };
        let c = sample_cloud(&Domain::unit(dim).unwrap(), &labeled, n, seed).unwrap();
        build_graph(c, &ind(), eps).unwrap()
    }

    fn star(weights: &[f64]) -> WeightedGraph {
        // Node 0 at the center of a 2D star; neighbor values are supplied by f.
        let n = weights.len() + 1;
        let mut coords = vec![0.5, 0.5];
        for (i, w) in weights.iter().enumerate() {
            let ang = i as f64;
            // Weight depends on distance through the exponential profile.
            let r = -w.ln() * 0.01;
            coords.extend([0.5 + r * ang.cos(), 0.5 + r * ang.sin()]);
        }
        let c = PointCloud::new(Domain::unit(2).unwrap(), coords, vec![], 0).unwrap();
        let g = build_graph(c, &KernelProfile::exponential(), 0.01).unwrap();
        assert_eq!(g.neighbors(0).len(), n - 1);
        g
    }

    #[test]
    fn coordinate_update_examples() {
        let g = star(&[0.5, 0.5]);
        let f = [0.3, 0.0, 1.0];
        let u = coordinate_update(&g, &f, 0, 2.0, 1e-12).unwrap();
        assert!((u.value - 0.5).abs() < 1e-12 && !u.isolated);
        let u = coordinate_update(&g, &f, 0, 4.0, 1e-12).unwrap();
        assert!((u.value - 0.5).abs() < 1e-11);
        let g1 = star(&[0.3]);
        for p in [1.2, 1.5, 2.0, 3.0] {
            let u = coordinate_update(&g1, &[0.0, 0.7], 0, p, 1e-12).unwrap();
            assert!((u.value - 0.7).abs() < 1e-12, "p {p}: {}", u.value);
        }
        let d = Domain::unit(1).unwrap();
        let c = PointCloud::new(d, vec![0.0, 0.9], vec![], 0).unwrap();
        let g = build_graph(c, &ind(), 0.1).unwrap();
        let u = coordinate_update(&g, &[0.25, 0.5], 0, 1.5, 1e-12).unwrap();
        assert!(u.isolated && u.value == 0.25);
        assert!(coordinate_update(&g, &[0.25, 0.5], 0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn coordinate_update_is_local_argmin() {
        let g = random_graph(80, 2, 0.25, 3);
        let f: Vec<f64> = (0..80).map(|k| ((k * 13) % 17) as f64 / 17.0).collect();
        for p in [1.3, 1.5, 2.5, 4.0] {
            for k in [2, 10, 40] {
                let t = coordinate_update(&g, &f, k, p, 1e-13).unwrap().value;
                let phi = |s: f64| -> f64 { g.neighbors(k).iter().map(|&(j, w)| w * (s - f[j]).abs().powf(p)).sum() };
                for s in [t - 1e-4, t + 1e-4] {
                    assert!(phi(s) >= phi(t));
                }
            }
        }
    }

    #[test]
    fn constrained_path_middle_is_half() {
        let g = path_graph();
        let pins = PinSet::from_labels(g.cloud());
        for p in [1.5, 2.0, 3.0] {
            let r = solve_constrained(&g, &pins, p, &SolveOptions::default()).unwrap();
            assert!((r.solution[2] - 0.5).abs() < 1e-10, "p {p}");
            assert!(r.converged && r.graph_connected);
        }
        let exact = solve_p2_exact(&g, &pins).unwrap();
        assert!((exact.solution[2] - 0.5).abs() < 1e-12);
        assert!(laplacian_residual(&g, &pins, &exact.solution) < 1e-12);
    }

    #[test]
    fn all_nodes_pinned() {
        let g = random_graph(20, 1, 0.2, 1);
        let pins = PinSet::new((0..20).map(|k| (k, k as f64)).collect()).unwrap();
        let r = solve_constrained(&g, &pins, 1.5, &SolveOptions::default()).unwrap();
        assert_eq!(r.sweeps_used, 0);
        assert_eq!(r.solution.values(), (0..20).map(|k| k as f64).collect::<Vec<_>>());
        let e = solve_p2_exact(&g, &pins).unwrap();
        assert_eq!(e.solution, r.solution);
    }

    #[test]
    fn empty_pins_rejected() {
        let g = path_graph();
        let none = PinSet::default();
        assert!(matches!(
            solve_constrained(&g, &none, 2.0, &SolveOptions::default()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(solve_p2_exact(&g, &none).is_err());
    }

    #[test]
    fn energy_history_nonincreasing() {
        for (p, init) in [(1.5, Init::Zeros), (2.0, Init::LabelMean), (4.0, Init::Zeros)] {
            let g = random_graph(150, 2, 0.15, 7);
            let pins = PinSet::from_labels(g.cloud());
            let opts = SolveOptions {
                init,
                clip_to_labels: false,
                max_sweeps: 300,
                ..Default::default()
            };
            let r = solve_constrained(&g, &pins, p, &opts).unwrap();
            for w in r.energy_history.windows(2) {
                assert!(w[1] <= w[0], "p {p}: {} -> {}", w[0], w[1]);
            }
            let re = dirichlet_energy(&g, &r.solution, p).unwrap();
            assert!((re - r.final_energy).abs() <= 1e-12 * re);
        }
    }

    #[test]
    fn exact_and_coordinate_agree_and_obey_maximum_principle() {
        for seed in 0..4u64 {
            let g = random_graph(200, 1 + seed as usize % 2, if seed % 2 == 0 { 0.05 } else { 0.2 }, seed);
            if !is_connected(&g) {
                continue;
            }
            let pins = PinSet::from_labels(g.cloud());
            let exact = solve_p2_exact(&g, &pins).unwrap();
            let opts = SolveOptions {
                clip_to_labels: false,
                rel_energy_tol: 1e-15,
                max_sweeps: 200_000,
                ..Default::default()
            };
            let cd = solve_constrained(&g, &pins, 2.0, &opts).unwrap();
            let diff = exact
                .solution
                .iter()
                .zip(cd.solution.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-6, "seed {seed}: {diff}");
            for v in exact.solution.iter().chain(cd.solution.iter()) {
                assert!(*v >= -1e-8 && *v <= 1.0 + 1e-8);
            }
        }
    }

    #[test]
    fn disconnected_graph_keeps_pin_free_component_at_init() {
        let d = Domain::unit(1).unwrap();
        let xs = vec![0.0, 0.3, 0.1, 0.2, 0.8, 0.9];
        let c = PointCloud::new(d, xs, vec![0.0, 1.0], 0).unwrap();
        let g = build_graph(c, &ind(), 0.11).unwrap();
        assert!(!is_connected(&g));
        let pins = PinSet::from_labels(g.cloud());
        let opts = SolveOptions {
            init: Init::WarmStart(NodeFunction::from(vec![0.0, 1.0, 5.0, 5.0, 0.25, 0.75])),
            clip_to_labels: false,
            rel_energy_tol: 1e-15,
            ..Default::default()
        };
        let r = solve_constrained(&g, &pins, 2.0, &opts).unwrap();
        assert!(!r.graph_connected);
        assert_eq!(&r.solution[4..], &[0.25, 0.75]);
        assert!((r.solution[2] - 1.0 / 3.0).abs() < 1e-8);
        let h = solve_harmonic(&g, &pins, &opts).unwrap();
        assert_eq!(&h.solution[4..], &[0.25, 0.75]);
        match solve_p2_exact(&g, &pins) {
            Err(Error::SingularSystem { component, size, first }) => {
                assert_eq!((component, size, first), (1, 2, 4));
            }
            other => panic!("expected singular system, got {other:?}"),
        }
    }

    #[test]
    fn penalized_limits() {
        let g = random_graph(100, 1, 0.08, 5);
        let pins = PinSet::from_labels(g.cloud());
        let opts = SolveOptions {
            rel_energy_tol: 1e-14,
            max_sweeps: 100_000,
            ..Default::default()
        };
        let big = solve_penalized(&g, &pins, 2.0, 2.0, 1e12, &opts).unwrap();
        let con = solve_constrained(&g, &pins, 2.0, &opts).unwrap();
        for (a, b) in big.solution.iter().zip(con.solution.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
        let zero = solve_penalized(&g, &pins, 2.0, 2.0, 0.0, &SolveOptions::default()).unwrap();
        assert!(zero.solution.iter().all(|&v| v == 0.5));
        assert_eq!(zero.final_energy, 0.0);
        assert!(matches!(
            solve_penalized(&g, &pins, 2.0, 1.0, 1.0, &opts),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn penalized_p2_matches_normal_equations() {
        use nalgebra::{DMatrix, DVector};
        let g = random_graph(100, 2, 0.2, 9);
        let n = g.len();
        let pins = PinSet::from_labels(g.cloud());
        let lambda = 0.7;
        let c = 4.0 / (g.eps().powi(2) * (n * n) as f64);
        let mut a = DMatrix::<f64>::zeros(n, n);
        for e in g.edges() {
            a[(e.i, e.j)] -= c * e.weight;
            a[(e.j, e.i)] -= c * e.weight;
            a[(e.i, e.i)] += c * e.weight;
            a[(e.j, e.j)] += c * e.weight;
        }
        let mut rhs = DVector::<f64>::zeros(n);
        for (k, y) in pins.iter() {
            a[(k, k)] += 2.0 * lambda;
            rhs[k] = 2.0 * lambda * y;
        }
        let comp = g.components();
        // Pin-free components are singular; keep them at the initial value.
        for k in 0..n {
            if pins.iter().all(|(j, _)| comp[j] != comp[k]) {
                for j in 0..n {
                    a[(k, j)] = 0.0;
                }
                a[(k, k)] = 1.0;
                rhs[k] = 0.5;
            }
        }
        let want = a.lu().solve(&rhs).unwrap();
        let opts = SolveOptions {
            rel_energy_tol: 1e-15,
            max_sweeps: 200_000,
            clip_to_labels: false,
            ..Default::default()
        };
        let r = solve_penalized(&g, &pins, 2.0, 2.0, lambda, &opts).unwrap();
        for k in 0..n {
            assert!((r.solution[k] - want[k]).abs() < 1e-6, "node {k}");
        }
        let obj = penalized_objective(&g, &r.solution, &pins, 2.0, 2.0, lambda).unwrap();
        assert!((obj - r.final_energy).abs() <= 1e-12 * obj);
    }

    #[test]
    fn improved_solver_examples() {
        let g = random_graph(300, 1, 0.3, 2);
        let r = solve_improved(&g, 2.0, 2.0, &SolveOptions::default()).unwrap();
        for (k, x) in g.cloud().points().enumerate() {
            if x[0] < 0.5 {
                assert_eq!(r.solution[k], 0.0);
            } else if x[0] > 0.5 {
                assert_eq!(r.solution[k], 1.0);
            }
        }
        // Tiny radius: same pins as the plain constrained problem.
        let g = random_graph(300, 1, 0.02, 2);
        let pins = PinSet::from_labels(g.cloud());
        let tiny = 1e-9;
        let a = solve_improved(&g, tiny, 1.5, &SolveOptions::default()).unwrap();
        let b = solve_constrained(&g, &pins, 1.5, &SolveOptions::default()).unwrap();
        assert_eq!(a.solution, b.solution);
        // Feasible set inclusion.
        let g = random_graph(300, 1, 0.05, 4);
        let pins = PinSet::from_labels(g.cloud());
        let imp = solve_improved(&g, 2.0, 1.5, &SolveOptions::default()).unwrap();
        let con = solve_constrained(&g, &pins, 1.5, &SolveOptions::default()).unwrap();
        assert!(imp.final_energy >= con.final_energy);
    }

    #[test]
    fn permutation_equivariance() {
        let g = random_graph(120, 2, 0.18, 12);
        let cloud = g.cloud();
        let n = cloud.len();
        // Keep the two labeled points first, reverse the rest.
        let perm: Vec<usize> = (0..2).chain((2..n).rev()).collect();
        let coords: Vec<f64> = perm.iter().flat_map(|&k| cloud.point(k).to_vec()).collect();
        let c2 = PointCloud::new(cloud.domain().clone(), coords, cloud.labels().to_vec(), 0).unwrap();
        let g2 = build_graph(Arc::new(c2), &ind(), g.eps()).unwrap();
        let opts = SolveOptions {
            rel_energy_tol: 1e-14,
            max_sweeps: 100_000,
            ..Default::default()
        };
        let pins = PinSet::from_labels(cloud);
        let a = solve_constrained(&g, &pins, 3.0, &opts).unwrap();
        let b = solve_constrained(&g2, &pins, 3.0, &opts).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert!((b.solution[new] - a.solution[old]).abs() < 1e-8);
        }
    }

    /// Projected gradient descent with Armijo backtracking on the free
    /// coordinates; independent of the coordinate solver.
    fn brute_force_min(g: &WeightedGraph, pins: &PinSet, p: f64) -> Vec<f64> {
        let n = g.len();
        let free: Vec<bool> = (0..n).map(|k| pins.get(k).is_none()).collect();
        let mut f: Vec<f64> = (0..n).map(|k| pins.get(k).unwrap_or(0.3)).collect();
        let energy = |f: &[f64]| dirichlet_energy(g, f, p).unwrap();
        let mut step = 1.0;
        for _ in 0..200_000 {
            let grad = crate::energy::energy_gradient(g, &f, p, &free).unwrap();
            let gn: f64 = grad.iter().map(|v| v * v).sum();
            if gn.sqrt() < 1e-14 {
                break;
            }
            let e0 = energy(&f);
            step *= 2.0;
            loop {
                let trial: Vec<f64> = f.iter().zip(grad.iter()).map(|(x, d)| x - step * d).collect();
                if energy(&trial) <= e0 - 1e-4 * step * gn || step < 1e-300 {
                    f = trial;
                    break;
                }
                step *= 0.5;
            }
        }
        f
    }

    #[test]
    fn tiny_instances_match_brute_force() {
        for seed in 0..6u64 {
            let n = 5 + seed as usize % 4;
            let g = random_graph(n, 1 + seed as usize % 2, 0.9, seed);
            if !is_connected(&g) {
                continue;
            }
            let pins = PinSet::from_labels(g.cloud());
            for p in [1.5, 2.0, 3.0] {
                let want = brute_force_min(&g, &pins, p);
                let opts = SolveOptions {
                    rel_energy_tol: 1e-16,
                    max_sweeps: 100_000,
                    coord_tol: 1e-14,
                    ..Default::default()
                };
                let got = solve_constrained(&g, &pins, p, &opts).unwrap();
                let e_want = dirichlet_energy(&g, &want, p).unwrap();
                assert!(got.final_energy <= e_want * (1.0 + 1e-10), "seed {seed} p {p}");
                // For p < 2 the coupling term between two nodes with equal
                // values has unbounded curvature, which slows coordinate
                // moves along that direction.
                let tol = if p < 2.0 { 1e-5 } else { 1e-6 };
                for k in 0..n {
                    assert!((got.solution[k] - want[k]).abs() < tol, "seed {seed} p {p} node {k}");
                }
            }
        }
    }

    #[test]
    fn reweighted_matches_brute_force_on_tiny_instances() {
        for seed in 0..6u64 {
            let n = 5 + seed as usize % 4;
            let g = random_graph(n, 1 + seed as usize % 2, 0.9, seed);
            if !is_connected(&g) {
                continue;
            }
            let pins = PinSet::from_labels(g.cloud());
            for p in [1.2, 1.5, 1.8] {
                let want = brute_force_min(&g, &pins, p);
                let opts = SolveOptions {
                    rel_energy_tol: 1e-14,
                    ..Default::default()
                };
                let got = solve_irls(&g, &pins, p, &opts).unwrap();
                assert!(got.converged);
                let e_want = dirichlet_energy(&g, &want, p).unwrap();
                assert!(got.final_energy <= e_want * (1.0 + 1e-9), "seed {seed} p {p}");
                for k in 0..n {
                    assert!((got.solution[k] - want[k]).abs() < 1e-5, "seed {seed} p {p} node {k}");
                }
            }
        }
    }

    #[test]
    fn reweighted_beats_coordinate_descent_and_keeps_bounds() {
        for seed in 0..3u64 {
            let g = random_graph(300, 1 + seed as usize % 2, 0.15, seed);
            let pins = PinSet::from_labels(g.cloud());
            let opts = SolveOptions {
                clip_to_labels: false,
                ..Default::default()
            };
            let irls = solve_irls(&g, &pins, 1.5, &opts).unwrap();
            let cd = solve_constrained(
                &g,
                &pins,
                1.5,
                &SolveOptions {
                    max_sweeps: 500,
                    ..opts.clone()
                },
            )
            .unwrap();
            assert!(irls.final_energy <= cd.final_energy * (1.0 + 1e-12), "seed {seed}");
            for v in irls.solution.iter() {
                assert!(*v >= -1e-8 && *v <= 1.0 + 1e-8);
            }
            // A coordinate sweep from the result barely moves it.
            let polish = solve_constrained(
                &g,
                &pins,
                1.5,
                &SolveOptions {
                    init: Init::WarmStart(irls.solution.clone()),
                    max_sweeps: 5,
                    ..opts
                },
            )
            .unwrap();
            assert!(irls.final_energy - polish.final_energy <= 1e-9 * irls.final_energy);
        }
    }

    #[test]
    fn reweighted_rejects_bad_exponents() {
        let g = path_graph();
        let pins = PinSet::from_labels(g.cloud());
        for p in [1.0, 2.5] {
            assert!(matches!(
                solve_irls(&g, &pins, p, &SolveOptions::default()),
                Err(Error::Unsupported(_))
            ));
        }
        let r = solve_irls(&g, &pins, 2.0, &SolveOptions::default()).unwrap();
        assert!((r.solution[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn direct_and_iterative_solves_agree() {
        for seed in 0..4u64 {
            let g = random_graph(400, 1 + seed as usize % 2, if seed < 2 { 0.05 } else { 0.2 }, seed);
            let pins = PinSet::from_labels(g.cloud());
            let frozen = pin_free_nodes(&g, &pins);
            let sys = ReducedSystem::new(&g, &pins, &frozen);
            let weights: Vec<f64> = (0..g.len())
                .flat_map(|k| {
                    g.neighbors(k)
                        .iter()
                        .map(move |&(j, w)| w * (1.0 + ((k + j) % 5) as f64))
                })
                .collect();
            let mut init = vec![0.5; g.len()];
            for (k, y) in pins.iter() {
                init[k] = y;
            }
            let Some(direct) = sys.direct(&weights, &init) else {
                continue;
            };
            let (cg, _, ok) = sys.cg(&weights, init, CG_REL_RESIDUAL);
            assert!(ok);
            for k in 0..g.len() {
                if sys.free[k] {
                    assert!((direct[sys.index[k]] - cg[k]).abs() < 1e-8, "seed {seed} node {k}");
                }
            }
        }
    }
}
