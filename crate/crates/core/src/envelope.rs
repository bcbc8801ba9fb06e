//! Envelope (profile) Cholesky factorization with reverse Cuthill–McKee
//! ordering, for the sparse SPD systems of the `p = 2` and reweighted solves.

use std::collections::VecDeque;

/// Row structure of the factor for a fixed sparsity pattern.
#[derive(Debug, Clone)]
pub(crate) struct Envelope {
    /// `order[new] = old`
    order: Vec<usize>,
    /// `position[old] = new`
    position: Vec<usize>,
    /// First stored column of each permuted row.
    first: Vec<usize>,
    /// Offset of each row in the packed storage; row `i` holds columns
    /// `first[i]..=i`.
    offset: Vec<usize>,
}

impl Envelope {
    /// `adj[i]` lists the off-diagonal neighbors of row `i`.
    pub(crate) fn new(adj: &[Vec<usize>]) -> Self {
        let m = adj.len();
        let order = reverse_cuthill_mckee(adj);
        let mut position = vec![0; m];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let mut first: Vec<usize> = (0..m).collect();
        for (old, nb) in adj.iter().enumerate() {
            let i = position[old];
            for &j in nb {
                let pj = position[j];
                if pj < first[i] {
                    first[i] = pj;
                }
            }
        }
        let mut offset = Vec::with_capacity(m + 1);
        offset.push(0);
        for i in 0..m {
            offset.push(offset[i] + i - first[i] + 1);
        }
        Envelope {
            order,
            position,
            first,
            offset,
        }
    }

    /// Stored entries of the factor.
    pub(crate) fn storage(&self) -> usize {
        *self.offset.last().unwrap_or(&0)
    }

    /// Rough flop count of one factorization.
    pub(crate) fn factor_cost(&self) -> f64 {
        (0..self.first.len())
            .map(|i| {
                let w = (i - self.first[i]) as f64;
                w * w
            })
            .sum()
    }

    /// Factors the matrix with diagonal `diag` and off-diagonal entries
    /// produced by `entries(old_row, push)`, where `push(old_col, value)`
    /// records `A[row, col]`. Returns `None` if the matrix is not numerically
    /// positive definite.
    pub(crate) fn factor(
        &self,
        diag: &[f64],
        mut entries: impl FnMut(usize, &mut dyn FnMut(usize, f64)),
    ) -> Option<Factor<'_>> {
        let m = self.first.len();
        let mut l = vec![0.0; self.storage()];
        for old in 0..m {
            let i = self.position[old];
            let base = self.offset[i] - self.first[i];
            l[base + i] = diag[old];
            entries(old, &mut |col, v| {
                let j = self.position[col];
                if j < i {
                    l[base + j] += v;
                }
            });
        }
        for i in 0..m {
            let fi = self.first[i];
            let bi = self.offset[i] - fi;
            for j in fi..i {
                let fj = self.first[j];
                let bj = self.offset[j] - fj;
                let lo = fi.max(fj);
                let s: f64 = (lo..j).map(|k| l[bi + k] * l[bj + k]).sum();
                l[bi + j] = (l[bi + j] - s) / l[bj + j];
            }
            let s: f64 = (fi..i).map(|k| l[bi + k] * l[bi + k]).sum();
            let d = l[bi + i] - s;
            if !(d > 0.0) {
                return None;
            }
            l[bi + i] = d.sqrt();
        }
        Some(Factor { env: self, l })
    }
}

pub(crate) struct Factor<'a> {
    env: &'a Envelope,
    l: Vec<f64>,
}

impl Factor<'_> {
    /// Solves `A x = b` with `b` and `x` in the original ordering.
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let env = self.env;
        let m = env.first.len();
        let mut y: Vec<f64> = env.order.iter().map(|&old| b[old]).collect();
        for i in 0..m {
            let fi = env.first[i];
            let bi = env.offset[i] - fi;
            let s: f64 = (fi..i).map(|k| self.l[bi + k] * y[k]).sum();
            y[i] = (y[i] - s) / self.l[bi + i];
        }
        for i in (0..m).rev() {
            let fi = env.first[i];
            let bi = env.offset[i] - fi;
            y[i] /= self.l[bi + i];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.l[bi + k] * yi;
            }
        }
        let mut x = vec![0.0; m];
        for (new, &old) in env.order.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

fn bfs_levels(
    adj: &[Vec<usize>],
    start: usize,
    level: &mut [usize],
    stamp: &mut [usize],
    tag: usize,
) -> (usize, Vec<usize>) {
    let mut queue = VecDeque::from([start]);
    let mut seen = vec![start];
    stamp[start] = tag;
    level[start] = 0;
    let mut depth = 0;
    while let Some(v) = queue.pop_front() {
        depth = depth.max(level[v]);
        for &u in &adj[v] {
            if stamp[u] != tag {
                stamp[u] = tag;
                level[u] = level[v] + 1;
                seen.push(u);
                queue.push_back(u);
            }
        }
    }
    (depth, seen)
}

/// Pseudo-peripheral start per component, then breadth-first numbering
/// with neighbors taken in increasing degree; the result is reversed.
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let m = adj.len();
    let mut placed = vec![false; m];
    let mut level = vec![0; m];
    let mut stamp = vec![usize::MAX; m];
    let mut tag = 0;
    let mut order = Vec::with_capacity(m);
    for seed in 0..m {
        if placed[seed] {
            continue;
        }
        let mut start = seed;
        let (mut depth, mut comp) = bfs_levels(adj, start, &mut level, &mut stamp, tag);
        tag += 1;
        for _ in 0..5 {
            let last = comp
                .iter()
                .copied()
                .filter(|&v| level[v] == depth)
                .min_by_key(|&v| adj[v].len())
                .unwrap_or(start);
            let (d, c) = bfs_levels(adj, last, &mut level, &mut stamp, tag);
            tag += 1;
            if d <= depth {
                break;
            }
            start = last;
            depth = d;
            comp = c;
        }
        let begin = order.len();
        order.push(start);
        placed[start] = true;
        let mut head = begin;
        let mut buf = Vec::new();
        while head < order.len() {
            let v = order[head];
            head += 1;
            buf.clear();
            buf.extend(adj[v].iter().copied().filter(|&u| !placed[u]));
            buf.sort_by_key(|&u| (adj[u].len(), u));
            for &u in &buf {
                placed[u] = true;
                order.push(u);
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .zip(b)
            .map(|(r, &bi)| {
                let mut r = r.clone();
                r.push(bi);
                r
            })
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
            m.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..=n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        (0..n).map(|i| m[i][n] / m[i][i]).collect()
    }

    #[test]
    fn matches_dense_elimination_on_random_sparse_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = 5 + trial * 3;
            let mut a = vec![vec![0.0; n]; n];
            let mut adj = vec![Vec::new(); n];
            for i in 0..n {
                for j in 0..i {
                    if rng.random::<f64>() < 0.2 {
                        let w = rng.random_range(0.1..2.0);
                        a[i][j] = -w;
                        a[j][i] = -w;
                        adj[i].push(j);
                        adj[j].push(i);
                    }
                }
            }
            for i in 0..n {
                let s: f64 = a[i].iter().map(|v| -v).sum();
                a[i][i] = s + rng.random_range(0.05..1.0);
            }
            let diag: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
            let env = Envelope::new(&adj);
            let fac = env
                .factor(&diag, |r, push| {
                    for &c in &adj[r] {
                        push(c, a[r][c]);
                    }
                })
                .unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = fac.solve(&b);
            let y = dense_solve(&a, &b);
            for i in 0..n {
                assert!((x[i] - y[i]).abs() < 1e-10, "trial {trial} row {i}");
            }
        }
    }

    #[test]
    fn path_graph_gets_unit_bandwidth() {
        // Scrambled path 0-3-1-4-2.
        let edges = [(0, 3), (3, 1), (1, 4), (4, 2)];
        let mut adj = vec![Vec::new(); 5];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let env = Envelope::new(&adj);
        assert_eq!(env.storage(), 5 + 4);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let adj = vec![vec![1], vec![0]];
        let diag = [1.0, 1.0];
        let env = Envelope::new(&adj);
        assert!(env.factor(&diag, |r, push| push(1 - r, -2.0)).is_none());
    }
}
