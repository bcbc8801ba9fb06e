//! Uniform cell hashing for fixed-radius neighbor queries in 1D and 2D.

use std::collections::HashMap;

/// Euclidean distance; every module measures distances through this function
/// so that edge inclusion decisions agree bit for bit.
#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        (a[0] - b[0]).abs()
    } else {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        (dx * dx + dy * dy).sqrt()
    }
}

pub(crate) struct CellGrid<'a> {
    coords: &'a [f64],
    dim: usize,
    origin: [f64; 2],
    side: f64,
    cells: HashMap<[i64; 2], Vec<usize>>,
}

impl<'a> CellGrid<'a> {
    /// `side` must be at least the query radius; it is inflated slightly so
    /// that pairs exactly at the radius never straddle non-adjacent cells.
    pub fn new(coords: &'a [f64], dim: usize, origin: &[f64], side: f64) -> Self {
        let side = side * (1.0 + 1e-9);
        let mut o = [0.0; 2];
        o[..dim].copy_from_slice(&origin[..dim]);
        let mut grid = CellGrid {
            coords,
            dim,
            origin: o,
            side,
            cells: HashMap::new(),
        };
        for i in 0..coords.len() / dim {
            let key = grid.key(&coords[i * dim..(i + 1) * dim]);
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, x: &[f64]) -> [i64; 2] {
        let mut k = [0i64; 2];
        for a in 0..self.dim {
            k[a] = ((x[a] - self.origin[a]) / self.side).floor() as i64;
        }
        k
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Calls `f(j, dist)` for every point `j` in the 3^d block of cells around
    /// the point `x`. The caller applies the exact radius test.
    pub fn for_each_candidate(&self, x: &[f64], mut f: impl FnMut(usize, f64)) {
        let k = self.key(x);
        let span_y = if self.dim == 2 { -1..=1 } else { 0..=0 };
        for dy in span_y {
            for dx in -1..=1 {
                let key = [k[0].saturating_add(dx), k[1].saturating_add(dy)];
                if let Some(members) = self.cells.get(&key) {
                    for &j in members {
                        f(j, distance(x, self.point(j)));
                    }
                }
            }
        }
    }

    /// All unordered pairs `i < j` whose cells are adjacent, with distance.
    pub fn for_each_pair(&self, mut f: impl FnMut(usize, usize, f64)) {
        for i in 0..self.coords.len() / self.dim {
            let x = self.point(i);
            self.for_each_candidate(x, |j, d| {
                if j > i {
                    f(i, j, d)
                }
            });
        }
    }
}
