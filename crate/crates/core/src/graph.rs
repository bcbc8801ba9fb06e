//! ε-neighborhood weighted graphs over point clouds.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::sampling::PointCloud;
use crate::spatial::{distance, CellGrid};

/// Truncation point of the exponential profile; `exp(-40) < 5e-18`.
pub const EXPONENTIAL_CUTOFF: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `η(t) = 1` for `t <= b`, zero otherwise (closed support).
    Indicator,
    /// `η(t) = exp(-t)` for `t <= cutoff`, zero otherwise.
    Exponential,
}

/// Nonincreasing kernel profile with compact support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelProfile {
    kind: KernelKind,
    support: f64,
}

impl KernelProfile {
    pub fn indicator(support: f64) -> Result<Self> {
        Self::new(KernelKind::Indicator, support)
    }

    pub fn exponential() -> Self {
        KernelProfile {
            kind: KernelKind::Exponential,
            support: EXPONENTIAL_CUTOFF,
        }
    }

    pub fn new(kind: KernelKind, support: f64) -> Result<Self> {
        if !(support.is_finite() && support > 0.0) {
            return Err(Error::InvalidProfile(format!(
                "support must be positive and finite, got {support}"
            )));
        }
        Ok(KernelProfile { kind, support })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// Largest `t` with `η(t) > 0`.
    pub fn support(&self) -> f64 {
        self.support
    }

    /// Both profiles are truncated, so every moment `∫ η(t) t^k dt` is finite.
    pub fn has_finite_moment(&self, _p: f64, _dim: usize) -> bool {
        true
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        if t > self.support {
            return 0.0;
        }
        match self.kind {
            KernelKind::Indicator => 1.0,
            KernelKind::Exponential => (-t).exp(),
        }
    }
}

/// `η(dist/eps) / eps^dim`.
pub fn kernel_weight(profile: &KernelProfile, eps: f64, dist: f64, dim: usize) -> Result<f64> {
    if !(eps > 0.0) {
        return invalid(format!("eps must be positive, got {eps}"));
    }
    if !(dist >= 0.0) {
        return invalid(format!("distance must be nonnegative, got {dist}"));
    }
    Ok(weight_unchecked(profile, eps, dist, dim))
}

#[inline]
fn weight_unchecked(profile: &KernelProfile, eps: f64, dist: f64, dim: usize) -> f64 {
    profile.eval(dist / eps) / eps.powi(dim as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Symmetric sparse weights `W_ij = η(|x_i - x_j|/ε)/ε^d`, stored once per
/// unordered pair (`i < j`, sorted) plus a CSR neighbor index.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    cloud: Arc<PointCloud>,
    profile: KernelProfile,
    eps: f64,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    neighbors: Vec<(usize, f64)>,
    degree: Vec<f64>,
}

impl WeightedGraph {
    fn from_edges(cloud: Arc<PointCloud>, profile: KernelProfile, eps: f64, mut edges: Vec<Edge>) -> Self {
        edges.sort_by_key(|a| (a.i, a.j));
        let n = cloud.len();
        let mut count = vec![0usize; n];
        for e in &edges {
            count[e.i] += 1;
            count[e.j] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for c in &count {
            offsets.push(offsets.last().unwrap() + c);
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![(0usize, 0.0f64); offsets[n]];
        let mut degree = vec![0.0; n];
        // Edges are sorted by (i, j), so every neighbor list comes out sorted.
        for e in &edges {
            neighbors[fill[e.j]] = (e.i, e.weight);
            fill[e.j] += 1;
        }
        for e in &edges {
            neighbors[fill[e.i]] = (e.j, e.weight);
            fill[e.i] += 1;
        }
        for k in 0..n {
            neighbors[offsets[k]..offsets[k + 1]].sort_by_key(|&(j, _)| j);
            degree[k] = neighbors[offsets[k]..offsets[k + 1]].iter().map(|&(_, w)| w).sum();
        }
        WeightedGraph {
            cloud,
            profile,
            eps,
            edges,
            offsets,
            neighbors,
            degree,
        }
    }

    pub fn cloud(&self) -> &Arc<PointCloud> {
        &self.cloud
    }

    pub fn profile(&self) -> &KernelProfile {
        &self.profile
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of `k` with their weights, sorted by index.
    #[inline]
    pub fn neighbors(&self, k: usize) -> &[(usize, f64)] {
        &self.neighbors[self.offsets[k]..self.offsets[k + 1]]
    }

    /// Weighted degree `Σ_j W_kj`.
    #[inline]
    pub fn degree(&self, k: usize) -> f64 {
        self.degree[k]
    }

    /// Connected-component label of each node, numbered by smallest member.
    pub fn components(&self) -> Vec<usize> {
        let n = self.len();
        let mut uf = UnionFind::new(n);
        for e in &self.edges {
            uf.union(e.i, e.j);
        }
        let mut label = vec![usize::MAX; n];
        let mut root_label = vec![usize::MAX; n];
        let mut next = 0;
        for k in 0..n {
            let r = uf.find(k);
            if root_label[r] == usize::MAX {
                root_label[r] = next;
                next += 1;
            }
            label[k] = root_label[r];
        }
        label
    }

    /// Writes the `i,j,weight` edge list.
    pub fn write_edges_csv(&self, path: &Path) -> Result<()> {
        let run = || -> std::io::Result<()> {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(w, "i,j,weight")?;
            for e in &self.edges {
                writeln!(w, "{},{},{}", e.i, e.j, e.weight)?;
            }
            w.flush()
        };
        run().map_err(|e| Error::io(path, e))
    }
}

/// Builds the ε-graph using a cell grid of side `ε·support`.
pub fn build_graph(cloud: impl Into<Arc<PointCloud>>, profile: &KernelProfile, eps: f64) -> Result<WeightedGraph> {
    let cloud = cloud.into();
    if !(eps > 0.0 && eps.is_finite()) {
        return invalid(format!("eps must be positive and finite, got {eps}"));
    }
    let dim = cloud.dim();
    let grid = CellGrid::new(cloud.coords(), dim, cloud.domain().lower(), eps * profile.support());
    let mut edges = Vec::new();
    grid.for_each_pair(|i, j, d| {
        let w = weight_unchecked(profile, eps, d, dim);
        if w > 0.0 {
            edges.push(Edge { i, j, weight: w });
        }
    });
    Ok(WeightedGraph::from_edges(cloud, *profile, eps, edges))
}

/// O(n²) reference construction; used to cross-check [`build_graph`].
pub fn build_graph_brute_force(
    cloud: impl Into<Arc<PointCloud>>,
    profile: &KernelProfile,
    eps: f64,
) -> Result<WeightedGraph> {
    let cloud = cloud.into();
    if !(eps > 0.0 && eps.is_finite()) {
        return invalid(format!("eps must be positive and finite, got {eps}"));
    }
    let dim = cloud.dim();
    let mut edges = Vec::new();
    for i in 0..cloud.len() {
        for j in i + 1..cloud.len() {
            let w = weight_unchecked(profile, eps, distance(cloud.point(i), cloud.point(j)), dim);
            if w > 0.0 {
                edges.push(Edge { i, j, weight: w });
            }
        }
    }
    Ok(WeightedGraph::from_edges(cloud, *profile, eps, edges))
}

pub fn is_connected(graph: &WeightedGraph) -> bool {
    let n = graph.len();
    if n <= 1 {
        return true;
    }
    let mut uf = UnionFind::new(n);
    let mut merges = 0;
    for e in graph.edges() {
        if uf.union(e.i, e.j) {
            merges += 1;
            if merges == n - 1 {
                return true;
            }
        }
    }
    false
}

/// Smallest ε for which [`build_graph`] is connected: the longest edge of the
/// Euclidean minimum spanning tree divided by the profile support.
pub fn connectivity_radius(cloud: &PointCloud, profile: &KernelProfile) -> Result<f64> {
    let n = cloud.len();
    if n < 2 {
        return invalid("connectivity radius needs at least two points");
    }
    let longest = if cloud.dim() == 1 {
        let mut xs = cloud.coords().to_vec();
        xs.sort_by(f64::total_cmp);
        xs.windows(2).map(|w| distance(&w[1..2], &w[0..1])).fold(0.0, f64::max)
    } else {
        mst_longest_edge_prim(cloud)
    };
    if longest == 0.0 {
        // All points coincide; any positive ε connects them.
        return Ok(f64::MIN_POSITIVE);
    }
    // `longest / b` can round so that `longest / eps` lands just above `b`.
    let mut eps = longest / profile.support();
    while profile.eval(longest / eps) <= 0.0 {
        eps = eps.next_up();
    }
    Ok(eps)
}

fn mst_longest_edge_prim(cloud: &PointCloud) -> f64 {
    let n = cloud.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut longest: f64 = 0.0;
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let x = cloud.point(current);
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = distance(x, cloud.point(j));
            if d < best[j] {
                best[j] = d;
            }
            if best[j] < next_d {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        longest = longest.max(next_d);
        current = next;
    }
    longest
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when two distinct sets were merged.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            std::cmp::Ordering::Less => self.parent[a] = b,
            std::cmp::Ordering::Greater => self.parent[b] = a,
            std::cmp::Ordering::Equal => {
                self.parent[b] = a;
                self.rank[a] += 1;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_cloud, Domain};

    fn cloud_1d(xs: &[f64], hi: f64) -> Arc<PointCloud> {
        let d = Domain::uniform(vec![0.0], vec![hi]).unwrap();
        Arc::new(PointCloud::new(d, xs.to_vec(), vec![], 0).unwrap())
    }

    fn ind(b: f64) -> KernelProfile {
        KernelProfile::indicator(b).unwrap()
    }

    #[test]
    fn kernel_weight_examples() {
        assert_eq!(kernel_weight(&ind(1.0), 1.0, 0.5, 1).unwrap(), 1.0);
        let w = kernel_weight(&ind(1.0), 0.1, 0.05, 2).unwrap();
        assert!((w - 100.0).abs() < 1e-9, "{w}");
        assert_eq!(kernel_weight(&ind(1.0), 0.1, 0.2, 1).unwrap(), 0.0);
        assert!(kernel_weight(&ind(1.0), 0.0, 0.2, 1).is_err());
        assert!(kernel_weight(&ind(1.0), -1.0, 0.2, 1).is_err());
        let e = KernelProfile::exponential();
        assert!((kernel_weight(&e, 2.0, 1.0, 1).unwrap() - (-0.5f64).exp() / 2.0).abs() < 1e-15);
        assert_eq!(e.eval(40.5), 0.0);
    }

    #[test]
    fn build_graph_examples() {
        let g = build_graph(cloud_1d(&[0.0, 0.5, 2.0], 2.0), &ind(1.0), 1.0).unwrap();
        assert_eq!(
            g.edges(),
            &[Edge {
                i: 0,
                j: 1,
                weight: 1.0
            }]
        );
        let g = build_graph(cloud_1d(&[0.0, 0.5, 2.0], 2.0), &ind(1.0), 0.4).unwrap();
        assert_eq!(g.num_edges(), 0);
        // Exactly at the support boundary the edge is kept.
        let d = 0.3;
        for b in [1.0, 2.0] {
            let g = build_graph(cloud_1d(&[0.1, 0.1 + d], 1.0), &ind(b), (0.1 + d - 0.1) / b).unwrap();
            assert_eq!(g.num_edges(), 1);
        }
    }

    #[test]
    fn neighbor_index_matches_edges() {
        let c = sample_cloud(&Domain::unit(2).unwrap(), &[], 300, 5).unwrap();
        let g = build_graph(c, &ind(1.0), 0.1).unwrap();
        let total: usize = (0..g.len()).map(|k| g.neighbors(k).len()).sum();
        assert_eq!(total, 2 * g.num_edges());
        for e in g.edges() {
            assert!(e.i < e.j);
            assert!(g.neighbors(e.i).contains(&(e.j, e.weight)));
            assert!(g.neighbors(e.j).contains(&(e.i, e.weight)));
        }
        for k in 0..g.len() {
            let s: f64 = g.neighbors(k).iter().map(|x| x.1).sum();
            assert_eq!(s, g.degree(k));
        }
    }

    #[test]
    fn connectivity_examples() {
        let empty = build_graph(cloud_1d(&[0.0, 0.5], 1.0), &ind(1.0), 0.1).unwrap();
        assert!(!is_connected(&empty));
        let path = build_graph(cloud_1d(&[0.0, 0.3, 0.6, 0.9], 1.0), &ind(1.0), 0.31).unwrap();
        assert!(is_connected(&path));
        let cliques = build_graph(cloud_1d(&[0.0, 0.05, 0.1, 0.8, 0.85, 0.9], 1.0), &ind(1.0), 0.2).unwrap();
        assert!(!is_connected(&cliques));
        assert_eq!(cliques.components(), vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn connectivity_radius_examples() {
        let c = cloud_1d(&[0.0, 0.3, 1.0], 1.0);
        let r = connectivity_radius(&c, &ind(1.0)).unwrap();
        assert_eq!(r, 1.0 - 0.3);
        for n in [2usize, 5, 11, 101] {
            let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let r = connectivity_radius(&cloud_1d(&xs, 1.0), &ind(1.0)).unwrap();
            assert!((r - 1.0 / (n - 1) as f64).abs() < 1e-15, "{n}: {r}");
        }
        let c = sample_cloud(&Domain::unit(2).unwrap(), &[], 200, 3).unwrap();
        let r1 = connectivity_radius(&c, &ind(1.0)).unwrap();
        let r2 = connectivity_radius(&c, &ind(2.0)).unwrap();
        assert_eq!(r2, r1 / 2.0);
        assert!(connectivity_radius(&cloud_1d(&[0.5], 1.0), &ind(1.0)).is_err());
    }

    /// Binary search over candidate radii `d_ij / b` with the connectivity test.
    fn radius_by_search(cloud: &Arc<PointCloud>, profile: &KernelProfile) -> f64 {
        let n = cloud.len();
        let mut cands = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                cands.push(distance(cloud.point(i), cloud.point(j)) / profile.support());
            }
        }
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        let (mut lo, mut hi) = (0usize, cands.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if is_connected(&build_graph(cloud.clone(), profile, cands[mid]).unwrap()) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        cands[lo]
    }

    #[test]
    fn connectivity_radius_matches_search_oracle() {
        for seed in 0..20u64 {
            for dim in [1, 2] {
                let n = 20 + (seed as usize * 9) % 180;
                let c = Arc::new(sample_cloud(&Domain::unit(dim).unwrap(), &[], n, seed).unwrap());
                for b in [1.0, 2.0] {
                    let p = ind(b);
                    let r = connectivity_radius(&c, &p).unwrap();
                    assert_eq!(r, radius_by_search(&c, &p), "seed {seed} dim {dim} b {b}");
                    assert!(is_connected(&build_graph(c.clone(), &p, r).unwrap()));
                }
            }
        }
    }

    #[test]
    fn cell_grid_matches_brute_force() {
        for seed in 0..100u64 {
            let dim = 1 + (seed as usize % 2);
            let n = 50 + (seed as usize * 37) % 450;
            let c = Arc::new(sample_cloud(&Domain::unit(dim).unwrap(), &[], n, seed).unwrap());
            let profile = if seed % 3 == 0 {
                KernelProfile::exponential()
            } else {
                ind(1.0 + (seed % 2) as f64)
            };
            let eps = 0.005 + 0.1 * ((seed * 7919) % 100) as f64 / 100.0;
            let eps = if profile.kind() == KernelKind::Exponential {
                eps / 40.0
            } else {
                eps
            };
            let a = build_graph(c.clone(), &profile, eps).unwrap();
            let b = build_graph_brute_force(c.clone(), &profile, eps).unwrap();
            assert_eq!(a.edges(), b.edges(), "seed {seed}");
        }
    }

    #[test]
    fn weights_reproducible_from_positions() {
        let c = sample_cloud(&Domain::unit(2).unwrap(), &[], 400, 8).unwrap();
        let g = build_graph(c, &KernelProfile::exponential(), 0.002).unwrap();
        for e in g.edges() {
            let d = distance(g.cloud().point(e.i), g.cloud().point(e.j));
            let w = kernel_weight(g.profile(), g.eps(), d, 2).unwrap();
            assert_eq!(w.to_bits(), e.weight.to_bits());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn connectivity_monotone_in_eps(seed in any::<u64>(), dim in 1usize..3) {
                let c = Arc::new(sample_cloud(&Domain::unit(dim).unwrap(), &[], 120, seed).unwrap());
                let mut was = false;
                for k in 1..40 {
                    let eps = 0.01 * k as f64;
                    let now = is_connected(&build_graph(c.clone(), &ind(1.0), eps).unwrap());
                    prop_assert!(!was || now);
                    was = now;
                }
            }
        }
    }
}
