//! Continuum limits: the kernel constant σ_η, the continuum p-Dirichlet
//! energy on a grid, the exact 1D minimizer and a 2D grid minimizer.

use std::f64::consts::FRAC_PI_2;

use crate::error::{invalid, Error, Result};
use crate::graph::{KernelKind, KernelProfile};
use crate::quadrature::adaptive_simpson;
use crate::sampling::{Domain, LabeledPoint};

/// Default number of grid intervals per axis for the 2D reference solve.
pub const DEFAULT_GRID_SIZE: usize = 64;

/// `σ_η = ∫ η(|x|) |x·e₁|^p dx` over `R^dim`.
pub fn sigma_eta(profile: &KernelProfile, p: f64, dim: usize) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return invalid(format!("p must be at least 1, got {p}"));
    }
    if !(1..=2).contains(&dim) {
        return Err(Error::Unsupported(format!("σ_η in dimension {dim}")));
    }
    if !profile.has_finite_moment(p, dim) {
        return Err(Error::InvalidProfile("divergent kernel moment".into()));
    }
    let b = profile.support();
    let k = p + dim as f64;
    // Radial part ∫_0^b η(r) r^(p+d-1) dr.
    let radial = match profile.kind() {
        KernelKind::Indicator => b.powf(k) / k,
        KernelKind::Exponential => {
            let f = |r: f64| (-r).exp() * r.powf(k - 1.0);
            // Scale of the integrand peak sets the absolute tolerance.
            let peak = f((k - 1.0).min(b)).max(f(b));
            adaptive_simpson(&f, 0.0, b, 1e-13 * peak.max(1e-300))
        }
    };
    // Angular part ∫_{S^{d-1}} |θ·e₁|^p dθ.
    let angular = match dim {
        1 => 2.0,
        _ => {
            if p == 2.0 {
                std::f64::consts::PI
            } else {
                4.0 * adaptive_simpson(&|t: f64| t.cos().max(0.0).powf(p), 0.0, FRAC_PI_2, 1e-15)
            }
        }
    };
    Ok(radial * angular)
}

/// Values on the `(cells + 1)^dim` nodes of a uniform grid over a box,
/// first axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cells: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(domain: &Domain, cells: usize, values: Vec<f64>) -> Result<Self> {
        if cells < 1 {
            return invalid("grid needs at least one cell per axis");
        }
        let expected = (cells + 1).pow(domain.dim() as u32);
        if values.len() != expected {
            return invalid(format!("grid expects {expected} values, got {}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("grid values must be finite");
        }
        Ok(GridFunction {
            lower: domain.lower().to_vec(),
            upper: domain.upper().to_vec(),
            cells,
            values,
        })
    }

    pub fn from_fn(domain: &Domain, cells: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let shell = GridFunction {
            lower: domain.lower().to_vec(),
            upper: domain.upper().to_vec(),
            cells,
            values: vec![],
        };
        let values = (0..shell.num_nodes()).map(|i| f(&shell.node_position(i))).collect();
        Self::new(domain, cells, values)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Intervals per axis; there are `cells + 1` nodes per axis.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells as f64
    }

    pub fn num_nodes(&self) -> usize {
        (self.cells + 1).pow(self.dim() as u32)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        ix + iy * (self.cells + 1)
    }

    pub fn node_position(&self, index: usize) -> Vec<f64> {
        let m = self.cells + 1;
        let mut rest = index;
        (0..self.dim())
            .map(|a| {
                let i = rest % m;
                rest /= m;
                self.lower[a] + i as f64 * self.spacing(a)
            })
            .collect()
    }

    /// Multilinear interpolation; `x` must lie in the closed box.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        interpolate_grid(self, x)
    }

    /// Writes `x,y,f` (or `x,f` in 1D).
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let run = || -> std::io::Result<()> {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(w, "{}", if self.dim() == 1 { "x,f" } else { "x,y,f" })?;
            for (i, v) in self.values.iter().enumerate() {
                for c in self.node_position(i) {
                    write!(w, "{c},")?;
                }
                writeln!(w, "{v}")?;
            }
            w.flush()
        };
        run().map_err(|e| Error::io(path, e))
    }
}

pub fn interpolate_grid(g: &GridFunction, x: &[f64]) -> Result<f64> {
    let dim = g.dim();
    if x.len() != dim {
        return invalid("point dimension differs from grid dimension");
    }
    let mut base = [0usize; 2];
    let mut frac = [0.0; 2];
    for a in 0..dim {
        if !(x[a] >= g.lower[a] && x[a] <= g.upper[a]) {
            return invalid(format!("point {x:?} lies outside the grid box"));
        }
        let s = (x[a] - g.lower[a]) / g.spacing(a);
        let i = (s.floor() as usize).min(g.cells - 1);
        base[a] = i;
        frac[a] = s - i as f64;
    }
    let v = &g.values;
    if dim == 1 {
        let i = base[0];
        return Ok(v[i] * (1.0 - frac[0]) + v[i + 1] * frac[0]);
    }
    let (i, j) = (base[0], base[1]);
    let (tx, ty) = (frac[0], frac[1]);
    let at = |a: usize, b: usize| v[g.node_index(a, b)];
    Ok((1.0 - ty) * ((1.0 - tx) * at(i, j) + tx * at(i + 1, j))
        + ty * ((1.0 - tx) * at(i, j + 1) + tx * at(i + 1, j + 1)))
}

/// Per-cell discretization of `Σ |∇g|^p ρ²` and its gradient.
///
/// In 2D each cell averages the four corner stencils, each built from the two
/// cell edges meeting at that corner, which keeps every square symmetry of
/// the grid.
struct GridEnergy {
    dim: usize,
    cells: usize,
    h: [f64; 2],
    /// `ρ²·cell volume` per cell.
    cell_weight: Vec<f64>,
    p: f64,
}

impl GridEnergy {
    fn new(g: &GridFunction, domain: &Domain, p: f64) -> Self {
        let dim = g.dim();
        let m = g.cells;
        let mut h = [1.0; 2];
        for a in 0..dim {
            h[a] = g.spacing(a);
        }
        let volume: f64 = h[..dim].iter().product();
        let ncells = m.pow(dim as u32);
        let cell_weight = (0..ncells)
            .map(|c| {
                let mut center = vec![0.0; dim];
                let mut rest = c;
                for a in 0..dim {
                    center[a] = g.lower[a] + ((rest % m) as f64 + 0.5) * h[a];
                    rest /= m;
                }
                let rho = domain.density_at(&center);
                rho * rho * volume
            })
            .collect();
        GridEnergy {
            dim,
            cells: m,
            h,
            cell_weight,
            p,
        }
    }

    /// Energy and, when `grad` is given, its gradient with respect to the
    /// node values.
    fn eval(&self, v: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let m = self.cells;
        let p = self.p;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut total = 0.0;
        if self.dim == 1 {
            for i in 0..m {
                let d = (v[i + 1] - v[i]) / self.h[0];
                let w = self.cell_weight[i];
                total += w * d.abs().powf(p);
                if let Some(g) = grad.as_deref_mut() {
                    let dd = w * p * d.signum() * d.abs().powf(p - 1.0) / self.h[0];
                    g[i + 1] += dd;
                    g[i] -= dd;
                }
            }
            return total;
        }
        let stride = m + 1;
        let idx = |a: usize, b: usize| a + b * stride;
        for j in 0..m {
            for i in 0..m {
                let w = 0.25 * self.cell_weight[i + j * m];
                // Edge differences: bottom, top (along x), left, right (along y).
                let dx = [
                    (v[idx(i + 1, j)] - v[idx(i, j)]) / self.h[0],
                    (v[idx(i + 1, j + 1)] - v[idx(i, j + 1)]) / self.h[0],
                ];
                let dy = [
                    (v[idx(i, j + 1)] - v[idx(i, j)]) / self.h[1],
                    (v[idx(i + 1, j + 1)] - v[idx(i + 1, j)]) / self.h[1],
                ];
                for (a, gx) in dx.iter().enumerate() {
                    for (b, gy) in dy.iter().enumerate() {
                        let s = gx * gx + gy * gy;
                        total += w * s.powf(0.5 * p);
                        if let Some(g) = grad.as_deref_mut() {
                            let c = if s > 0.0 { w * p * s.powf(0.5 * p - 1.0) } else { 0.0 };
                            let cx = c * gx / self.h[0];
                            let cy = c * gy / self.h[1];
                            g[idx(i + 1, j + a)] += cx;
                            g[idx(i, j + a)] -= cx;
                            g[idx(i + b, j + 1)] += cy;
                            g[idx(i + b, j)] -= cy;
                        }
                    }
                }
            }
        }
        total
    }
}

/// One corner stencil of a 2D cell: weight and the node pairs of the x and
/// y differences, `(x1, x0, y1, y0)`.
struct Term {
    w: f64,
    nodes: [usize; 4],
}

impl GridEnergy {
    fn for_each_term(&self, mut f: impl FnMut(Term)) {
        let m = self.cells;
        let stride = m + 1;
        let idx = |a: usize, b: usize| a + b * stride;
        for j in 0..m {
            for i in 0..m {
                let w = 0.25 * self.cell_weight[i + j * m];
                for a in 0..2 {
                    for b in 0..2 {
                        f(Term {
                            w,
                            nodes: [idx(i + 1, j + a), idx(i, j + a), idx(i + b, j + 1), idx(i + b, j)],
                        });
                    }
                }
            }
        }
    }

    fn differences(&self, t: &Term, v: &[f64]) -> (f64, f64) {
        let [x1, x0, y1, y0] = t.nodes;
        ((v[x1] - v[x0]) / self.h[0], (v[y1] - v[y0]) / self.h[1])
    }

    /// Curvature coefficients of `w·s^{p/2}` at gradient `(gx, gy)`: the
    /// Hessian in gradient space is `c1·I + c2·u uᵀ`.
    fn curvature(&self, w: f64, gx: f64, gy: f64) -> (f64, f64) {
        let p = self.p;
        let s = gx * gx + gy * gy;
        if s == 0.0 {
            return if p == 2.0 { (2.0 * w, 0.0) } else { (0.0, 0.0) };
        }
        (w * p * s.powf(0.5 * p - 1.0), w * p * (p - 2.0) * s.powf(0.5 * p - 2.0))
    }

    /// Hessian-vector product at `v` (2D only).
    fn hess_vec(&self, v: &[f64], x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let (hx, hy) = (self.h[0], self.h[1]);
        self.for_each_term(|t| {
            let (gx, gy) = self.differences(&t, v);
            let (c1, c2) = self.curvature(t.w, gx, gy);
            if c1 == 0.0 && c2 == 0.0 {
                return;
            }
            let (dx, dy) = self.differences(&t, x);
            let proj = c2 * (gx * dx + gy * dy);
            let (ax, ay) = ((c1 * dx + proj * gx) / hx, (c1 * dy + proj * gy) / hy);
            let [x1, x0, y1, y0] = t.nodes;
            out[x1] += ax;
            out[x0] -= ax;
            out[y1] += ay;
            out[y0] -= ay;
        });
    }

    fn hess_diag(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let (hx, hy) = (self.h[0], self.h[1]);
        self.for_each_term(|t| {
            let (gx, gy) = self.differences(&t, v);
            let (c1, c2) = self.curvature(t.w, gx, gy);
            // Column of the difference map for each distinct node.
            let mut cols: [(usize, f64, f64); 4] = [(usize::MAX, 0.0, 0.0); 4];
            let entries = [
                (t.nodes[0], 1.0 / hx, 0.0),
                (t.nodes[1], -1.0 / hx, 0.0),
                (t.nodes[2], 0.0, 1.0 / hy),
                (t.nodes[3], 0.0, -1.0 / hy),
            ];
            let mut len = 0;
            for (k, cx, cy) in entries {
                match cols[..len].iter_mut().find(|c| c.0 == k) {
                    Some(c) => {
                        c.1 += cx;
                        c.2 += cy;
                    }
                    None => {
                        cols[len] = (k, cx, cy);
                        len += 1;
                    }
                }
            }
            for &(k, cx, cy) in &cols[..len] {
                let u = gx * cx + gy * cy;
                out[k] += c1 * (cx * cx + cy * cy) + c2 * u * u;
            }
        });
    }
}

/// `σ_η Σ_cells |∇g|^p ρ² h^d` with difference quotients on cell edges.
pub fn continuum_energy(g: &GridFunction, p: f64, domain: &Domain, profile: &KernelProfile) -> Result<f64> {
    if domain.dim() != g.dim() {
        return invalid("grid and domain dimensions differ");
    }
    let sigma = sigma_eta(profile, p, g.dim())?;
    Ok(sigma * GridEnergy::new(g, domain, p).eval(&g.values, None))
}

/// Piecewise-linear function given by sorted knots, constant outside them.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    knots: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        if x >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let i = k.partition_point(|&(a, _)| a <= x) - 1;
        let (x0, y0) = k[i];
        let (x1, y1) = k[i + 1];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Minimizer of `∫|f'|^p` through 1D labeled points (any `p > 1`): linear
/// interpolation between consecutive labels, constant beyond them.
pub fn continuum_solution_1d(labeled: &[LabeledPoint]) -> Result<PiecewiseLinear> {
    if labeled.len() < 2 {
        return invalid("need at least two labeled points");
    }
    if labeled.iter().any(|lp| lp.position.len() != 1) {
        return invalid("labeled points must be one-dimensional");
    }
    let mut knots: Vec<(f64, f64)> = labeled.iter().map(|lp| (lp.position[0], lp.label)).collect();
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    if knots.windows(2).any(|w| w[0].0 == w[1].0) {
        return invalid("labeled points must be distinct");
    }
    Ok(PiecewiseLinear { knots })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumOptions {
    pub max_iter: usize,
    /// Stop when `‖∇E‖₂ / h` falls below this.
    pub grad_tol: f64,
}

impl Default for ContinuumOptions {
    fn default() -> Self {
        ContinuumOptions {
            max_iter: 100_000,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContinuumSolution {
    pub grid: GridFunction,
    /// `(grid node, snapped position)` per labeled point.
    pub snapped: Vec<(usize, Vec<f64>)>,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

/// Minimizes the grid energy with labeled nodes held fixed. Each iteration
/// takes a damped Newton direction on the free nodes (steepest descent if
/// that is not downhill) and halves the step until the Armijo condition
/// holds. Coarser grids are solved first and interpolated as the start.
pub fn solve_continuum_grid_2d(
    domain: &Domain,
    labeled: &[LabeledPoint],
    p: f64,
    cells: usize,
    opts: &ContinuumOptions,
) -> Result<ContinuumSolution> {
    if domain.dim() != 2 {
        return invalid("grid solver is two-dimensional");
    }
    if !(p > 2.0) {
        return invalid(format!("pointwise constraints in 2D need p > 2, got {p}"));
    }
    if cells < 2 {
        return invalid("grid needs at least two cells per axis");
    }
    if labeled.is_empty() {
        return invalid("need at least one labeled point");
    }
    let mut init: Option<GridFunction> = None;
    let mut level = cells;
    let mut levels = vec![cells];
    while level >= 32 && level.is_multiple_of(2) {
        level /= 2;
        levels.push(level);
    }
    levels.reverse();
    let mut result = None;
    for &m in &levels {
        let start = match &init {
            Some(coarse) => {
                let prev = coarse.clone();
                GridFunction::from_fn(domain, m, |x| prev.interpolate(x).unwrap())?
            }
            None => {
                let mean = labeled.iter().map(|l| l.label).sum::<f64>() / labeled.len() as f64;
                GridFunction::from_fn(domain, m, |_| mean)?
            }
        };
        let sol = descend(domain, labeled, p, start, opts)?;
        init = Some(sol.grid.clone());
        result = Some(sol);
    }
    Ok(result.unwrap())
}

fn snap(grid: &GridFunction, labeled: &[LabeledPoint]) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
    for lp in labeled {
        if lp.position.len() != 2 {
            return invalid("labeled points must be two-dimensional");
        }
        let mut ij = [0usize; 2];
        for a in 0..2 {
            let s = (lp.position[a] - grid.lower[a]) / grid.spacing(a);
            ij[a] = (s.round().max(0.0) as usize).min(grid.cells);
        }
        let node = grid.node_index(ij[0], ij[1]);
        if out.iter().any(|(k, _)| *k == node) {
            return invalid(format!("labeled points collide at grid node {node}; refine the grid"));
        }
        out.push((node, grid.node_position(node)));
    }
    Ok(out)
}

fn descend(
    domain: &Domain,
    labeled: &[LabeledPoint],
    p: f64,
    mut grid: GridFunction,
    opts: &ContinuumOptions,
) -> Result<ContinuumSolution> {
    let snapped = snap(&grid, labeled)?;
    let mut fixed = vec![false; grid.num_nodes()];
    for ((node, _), lp) in snapped.iter().zip(labeled) {
        grid.values[*node] = lp.label;
        fixed[*node] = true;
    }
    let energy = GridEnergy::new(&grid, domain, p);
    let h = grid.spacing(0).min(grid.spacing(1));
    let n = grid.num_nodes();
    let project = |g: &mut [f64]| {
        for k in 0..n {
            if fixed[k] {
                g[k] = 0.0;
            }
        }
    };
    let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt() / h;
    let mut v = grid.values.clone();
    let mut g = vec![0.0; n];
    let mut e = energy.eval(&v, Some(&mut g));
    project(&mut g);
    let mut gnorm = norm(&g);
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut iterations = 0;
    while gnorm >= opts.grad_tol && iterations < opts.max_iter {
        let dir = newton_direction(&energy, &v, &g, &fixed);
        let slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        // Fall back to steepest descent if the direction is not downhill.
        let dir = if slope < 0.0 {
            dir
        } else {
            g.iter().map(|x| -x).collect()
        };
        let slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for k in 0..n {
                trial[k] = v[k] + step * dir[k];
            }
            let e_trial = energy.eval(&trial, None);
            if e_trial <= e + 1e-4 * step * slope {
                std::mem::swap(&mut v, &mut trial);
                e = energy.eval(&v, Some(&mut g));
                project(&mut g);
                accepted = true;
                break;
            }
            // Near the minimum the energy change drowns in rounding; a full
            // step is then judged by the gradient instead.
            if step == 1.0 && e_trial <= e + 1e-13 * e.abs() {
                e_trial_grad(&energy, &trial, &mut g_trial, &project);
                if norm(&g_trial) < gnorm {
                    std::mem::swap(&mut v, &mut trial);
                    std::mem::swap(&mut g, &mut g_trial);
                    e = e_trial;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        gnorm = norm(&g);
        if !accepted {
            break;
        }
    }
    grid.values = v;
    Ok(ContinuumSolution {
        grid,
        snapped,
        energy: e,
        iterations,
        converged: gnorm < opts.grad_tol,
        grad_norm: gnorm,
    })
}

fn e_trial_grad(energy: &GridEnergy, v: &[f64], g: &mut [f64], project: &impl Fn(&mut [f64])) {
    energy.eval(v, Some(g));
    project(g);
}

/// Inexact damped Newton step on the free nodes: Jacobi-preconditioned CG
/// on `(H + μ D) d = −g` with `D` the Hessian diagonal.
fn newton_direction(energy: &GridEnergy, v: &[f64], g: &[f64], fixed: &[bool]) -> Vec<f64> {
    let n = v.len();
    let mut diag = vec![0.0; n];
    energy.hess_diag(v, &mut diag);
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let floor = 1e-10 * dmax.max(f64::MIN_POSITIVE);
    let mu = 1e-8;
    let pre: Vec<f64> = (0..n)
        .map(|k| {
            if fixed[k] {
                0.0
            } else {
                1.0 / (diag[k] * (1.0 + mu)).max(floor)
            }
        })
        .collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        energy.hess_vec(v, x, out);
        for k in 0..n {
            out[k] = if fixed[k] {
                0.0
            } else {
                out[k] + mu * diag[k].max(floor) * x[k]
            };
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|x| -x).collect();
    let r0 = dot(&r, &r).sqrt();
    let tol = r0 * r0.sqrt().min(0.1);
    let mut z: Vec<f64> = r.iter().zip(&pre).map(|(r, m)| r * m).collect();
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let mut ad = vec![0.0; n];
    for _ in 0..4 * n {
        if dot(&r, &r).sqrt() <= tol {
            break;
        }
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
        for k in 0..n {
            z[k] = r[k] * pre[k];
        }
        let next = dot(&r, &z);
        let beta = next / rz;
        rz = next;
        for k in 0..n {
            d[k] = z[k] + beta * d[k];
        }
    }
    if x.iter().all(|&t| t == 0.0) {
        return r.iter().zip(&pre).map(|(r, m)| r * m).collect();
    }
    x
}
