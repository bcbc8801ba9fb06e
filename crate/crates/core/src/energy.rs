//! Discrete and nonlocal energies, constraint sets and the oscillation
//! operator.

use std::ops::Deref;

use crate::error::{invalid, Error, Result};
use crate::graph::{KernelProfile, WeightedGraph};
use crate::power::Power;
use crate::sampling::{Domain, PointCloud};
use crate::spatial::{distance, CellGrid};

/// Constraint radius multiplier of the improved model, `R = min(2ε, L)`.
pub const DEFAULT_RADIUS_MULTIPLIER: f64 = 2.0;

/// One real value per graph node, in cloud order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeFunction(Vec<f64>);

impl NodeFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("node value {k} is not finite"));
        }
        Ok(NodeFunction(values))
    }

    pub fn constant(n: usize, c: f64) -> Self {
        NodeFunction(vec![c; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(n, 0.0)
    }

    /// Restriction of `f` to the cloud.
    pub fn from_fn(cloud: &PointCloud, f: impl Fn(&[f64]) -> f64) -> Self {
        NodeFunction(cloud.points().map(f).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for NodeFunction {
    fn from(values: Vec<f64>) -> Self {
        NodeFunction(values)
    }
}

impl Deref for NodeFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Hard constraints `f(k) = value`, sorted by node, at most one per node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PinSet {
    pins: Vec<(usize, f64)>,
}

impl PinSet {
    pub fn new(mut pins: Vec<(usize, f64)>) -> Result<Self> {
        pins.sort_by_key(|&(k, _)| k);
        for w in pins.windows(2) {
            if w[0].0 == w[1].0 {
                return invalid(format!("node {} pinned twice", w[0].0));
            }
        }
        if pins.iter().any(|(_, v)| !v.is_finite()) {
            return invalid("pinned values must be finite");
        }
        Ok(PinSet { pins })
    }

    /// `f(x_i) = y_i` for the labeled points of the cloud.
    pub fn from_labels(cloud: &PointCloud) -> Self {
        PinSet {
            pins: cloud.labels().iter().copied().enumerate().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pins.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.pins.iter().copied()
    }

    pub fn get(&self, node: usize) -> Option<f64> {
        self.pins
            .binary_search_by_key(&node, |&(k, _)| k)
            .ok()
            .map(|i| self.pins[i].1)
    }

    /// Smallest and largest pinned value.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        if self.pins.is_empty() {
            return None;
        }
        Some(
            self.pins
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
                    (lo.min(v), hi.max(v))
                }),
        )
    }

    pub(crate) fn check_range(&self, n: usize) -> Result<()> {
        match self.pins.last() {
            Some(&(k, _)) if k >= n => invalid(format!("pin index {k} out of range for {n} nodes")),
            _ => Ok(()),
        }
    }
}

fn check_len(graph: &WeightedGraph, f: &[f64]) -> Result<()> {
    if f.len() != graph.len() {
        return invalid(format!(
            "function has {} values but the graph has {} nodes",
            f.len(),
            graph.len()
        ));
    }
    Ok(())
}

/// `(1/(ε^p n²)) Σ_{i,j} W_ij |f_i - f_j|^p`, summed over stored edges.
pub fn dirichlet_energy(graph: &WeightedGraph, f: &[f64], p: f64) -> Result<f64> {
    check_len(graph, f)?;
    if !(p >= 1.0) {
        return invalid(format!("p must be at least 1, got {p}"));
    }
    Ok(dirichlet_energy_unchecked(graph, f, Power::new(p)))
}

pub(crate) fn energy_scale(graph: &WeightedGraph, p: f64) -> f64 {
    let n = graph.len() as f64;
    1.0 / (graph.eps().powf(p) * n * n)
}

pub(crate) fn dirichlet_energy_unchecked(graph: &WeightedGraph, f: &[f64], pw: Power) -> f64 {
    let sum: f64 = graph
        .edges()
        .iter()
        .map(|e| e.weight * pw.abs_pow(f[e.i] - f[e.j]))
        .sum();
    2.0 * sum * energy_scale(graph, pw.value())
}

/// `Σ_pins |value - f(node)|^q`.
pub fn penalty(f: &[f64], pins: &PinSet, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return invalid(format!("q must be positive, got {q}"));
    }
    pins.check_range(f.len())?;
    let pw = Power::new(q);
    Ok(pins.iter().map(|(k, y)| pw.abs_pow(y - f[k])).sum())
}

pub fn penalized_objective(
    graph: &WeightedGraph,
    f: &[f64],
    pins: &PinSet,
    p: f64,
    q: f64,
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return invalid(format!("lambda must be nonnegative, got {lambda}"));
    }
    let e = dirichlet_energy(graph, f, p)?;
    let r = penalty(f, pins, q)?;
    Ok(if lambda == 0.0 { e } else { e + lambda * r })
}

/// Half the smallest distance between labeled points; `+∞` for one label.
pub fn label_separation(cloud: &PointCloud) -> f64 {
    let mut l = f64::INFINITY;
    for i in 0..cloud.num_labeled() {
        for j in 0..i {
            l = l.min(distance(cloud.point(i), cloud.point(j)));
        }
    }
    l / 2.0
}

/// Constraint radius `min(multiplier·ε, L)` of the improved model.
pub fn improved_radius(cloud: &PointCloud, eps: f64, radius_multiplier: f64) -> f64 {
    (radius_multiplier * eps).min(label_separation(cloud))
}

/// Pins every node strictly within `R = min(multiplier·ε, L)` of a labeled
/// point to that point's label.
pub fn improved_pin_set(cloud: &PointCloud, eps: f64, radius_multiplier: f64) -> Result<PinSet> {
    if cloud.num_labeled() == 0 {
        return invalid("improved model needs at least one labeled point");
    }
    if !(eps > 0.0 && radius_multiplier > 0.0) {
        return invalid("eps and radius multiplier must be positive");
    }
    let radius = improved_radius(cloud, eps, radius_multiplier);
    let labels = cloud.labels();
    let mut pins = Vec::new();
    for k in 0..cloud.len() {
        let x = cloud.point(k);
        let mut pinned: Option<(usize, f64)> = None;
        for (i, &y) in labels.iter().enumerate() {
            if distance(x, cloud.point(i)) < radius {
                match pinned {
                    Some((other, v)) if v != y => {
                        return Err(Error::InfeasibleConstraints(format!(
                            "node {k} lies within {radius} of labeled points {other} and {i} with different labels"
                        )))
                    }
                    Some(_) => {}
                    None => pinned = Some((i, y)),
                }
            }
        }
        // Labeled nodes are always pinned to their own label.
        if k < labels.len() {
            pinned = Some((k, labels[k]));
        }
        if let Some((_, y)) = pinned {
            pins.push((k, y));
        }
    }
    PinSet::new(pins)
}

/// Per node, `max f - min f` over the closed ball of `radius` in the cloud.
pub fn oscillation(cloud: &PointCloud, f: &[f64], radius: f64) -> Result<NodeFunction> {
    if f.len() != cloud.len() {
        return invalid("function length differs from cloud size");
    }
    if !(radius > 0.0) {
        return invalid(format!("radius must be positive, got {radius}"));
    }
    let grid = CellGrid::new(cloud.coords(), cloud.dim(), cloud.domain().lower(), radius);
    let osc = (0..cloud.len())
        .map(|k| {
            let (mut lo, mut hi) = (f[k], f[k]);
            grid.for_each_candidate(cloud.point(k), |j, d| {
                if d <= radius {
                    lo = lo.min(f[j]);
                    hi = hi.max(f[j]);
                }
            });
            hi - lo
        })
        .collect();
    Ok(NodeFunction(osc))
}

/// Midpoint-rule value of the nonlocal energy together with a resolution flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlocalEnergy {
    pub value: f64,
    /// Set when the cell width exceeds `ε/4` on some axis.
    pub coarse: bool,
}

/// `(1/ε^p) ∫∫ η_ε(|x-z|) |g(x)-g(z)|^p dx dz` by the midpoint rule on
/// `cells` cells per axis.
pub fn nonlocal_energy(
    domain: &Domain,
    g: impl Fn(&[f64]) -> f64,
    cells: usize,
    profile: &KernelProfile,
    eps: f64,
    p: f64,
) -> Result<NonlocalEnergy> {
    if cells == 0 || !(eps > 0.0) || !(p >= 1.0) {
        return invalid("need cells >= 1, eps > 0 and p >= 1");
    }
    let dim = domain.dim();
    let h: Vec<f64> = (0..dim)
        .map(|a| (domain.upper()[a] - domain.lower()[a]) / cells as f64)
        .collect();
    let coarse = h.iter().any(|&w| w > eps / 4.0);
    let m = cells;
    let total = m.pow(dim as u32);
    let center = |idx: usize| -> [f64; 2] {
        let mut c = [0.0; 2];
        let mut rest = idx;
        for a in 0..dim {
            c[a] = domain.lower()[a] + (rest % m) as f64 * h[a] + 0.5 * h[a];
            rest /= m;
        }
        c
    };
    let values: Vec<f64> = (0..total).map(|i| g(&center(i)[..dim])).collect();
    let pw = Power::new(p);
    let reach: Vec<i64> = h
        .iter()
        .map(|&w| (eps * profile.support() / w).ceil() as i64 + 1)
        .collect();
    let cell_volume: f64 = h.iter().product();
    let eps_d = eps.powi(dim as i32);
    let mut sum = 0.0;
    for a in 0..total {
        let ca = center(a);
        let ia = [(a % m) as i64, (a / m) as i64];
        let (ylo, yhi) = if dim == 2 { (-reach[1], reach[1]) } else { (0, 0) };
        for dy in ylo..=yhi {
            let jy = ia[1] + dy;
            if dim == 2 && (jy < 0 || jy >= m as i64) {
                continue;
            }
            for dx in -reach[0]..=reach[0] {
                let jx = ia[0] + dx;
                if jx < 0 || jx >= m as i64 {
                    continue;
                }
                let b = if dim == 2 {
                    jx as usize + jy as usize * m
                } else {
                    jx as usize
                };
                let cb = center(b);
                let w = profile.eval(distance(&ca[..dim], &cb[..dim]) / eps);
                if w > 0.0 {
                    sum += w * pw.abs_pow(values[a] - values[b]);
                }
            }
        }
    }
    Ok(NonlocalEnergy {
        value: sum * cell_volume * cell_volume / eps_d / eps.powf(p),
        coarse,
    })
}

/// Gradient of [`dirichlet_energy`], zeroed outside `free`.
pub fn energy_gradient(graph: &WeightedGraph, f: &[f64], p: f64, free: &[bool]) -> Result<NodeFunction> {
    if !(p > 1.0) {
        return Err(Error::Unsupported(format!("energy gradient needs p > 1, got {p}")));
    }
    check_len(graph, f)?;
    if free.len() != f.len() {
        return invalid("mask length differs from function length");
    }
    let pw = Power::new(p);
    let scale = 2.0 * p * energy_scale(graph, p);
    let grad = (0..f.len())
        .map(|k| {
            if !free[k] {
                return 0.0;
            }
            let s: f64 = graph
                .neighbors(k)
                .iter()
                .map(|&(j, w)| w * pw.signed_pow_m1(f[k] - f[j]))
                .sum();
            scale * s
        })
        .collect();
    Ok(NodeFunction(grad))
}
