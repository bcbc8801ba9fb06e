//! Reproducible point clouds on box domains.
//!
//! Every cloud is drawn from a single `ChaCha8Rng` stream seeded with
//! `seed_from_u64(seed)`. Unlabeled points are generated one after another
//! from that stream, so a cloud of size `n1` is always a prefix of the cloud
//! of size `n2 > n1` with the same seed.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

const DENSITY_MASS_TOL: f64 = 1e-9;

/// Sampling density on the domain box.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    Uniform,
    /// Piecewise constant on a regular grid of `cells[axis]` cells per axis.
    /// `values` is row-major with the first axis varying fastest.
    Tabulated {
        cells: Vec<usize>,
        values: Vec<f64>,
    },
}

/// Axis-aligned box in one or two dimensions together with its density.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    density: Density,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, density: Density) -> Result<Self> {
        let dim = lower.len();
        if !(1..=2).contains(&dim) {
            return invalid(format!("domain dimension must be 1 or 2, got {dim}"));
        }
        if upper.len() != dim {
            return invalid("lower and upper bounds differ in dimension");
        }
        for (a, b) in lower.iter().zip(&upper) {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return invalid(format!("empty or non-finite axis [{a}, {b}]"));
            }
        }
        let domain = Domain { lower, upper, density };
        domain.check_density()?;
        Ok(domain)
    }

    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::new(lower, upper, Density::Uniform)
    }

    /// The unit interval or unit square with uniform density.
    pub fn unit(dim: usize) -> Result<Self> {
        Self::uniform(vec![0.0; dim], vec![1.0; dim])
    }

    fn check_density(&self) -> Result<()> {
        let Density::Tabulated { cells, values } = &self.density else {
            return Ok(());
        };
        if cells.len() != self.dim() || cells.contains(&0) {
            return invalid("tabulated density needs a positive cell count per axis");
        }
        let total: usize = cells.iter().product();
        if values.len() != total {
            return invalid(format!(
                "tabulated density has {} values, expected {total}",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return invalid("tabulated density must be finite and strictly positive");
        }
        let cell_volume: f64 = (0..self.dim())
            .map(|a| (self.upper[a] - self.lower[a]) / cells[a] as f64)
            .product();
        let mass: f64 = values.iter().sum::<f64>() * cell_volume;
        if (mass - 1.0).abs() > DENSITY_MASS_TOL {
            return invalid(format!("tabulated density integrates to {mass}, not 1"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).product()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Density value at `x`; zero outside the box.
    pub fn density_at(&self, x: &[f64]) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        match &self.density {
            Density::Uniform => 1.0 / self.volume(),
            Density::Tabulated { cells, values } => {
                let mut index = 0;
                let mut stride = 1;
                for a in 0..self.dim() {
                    let t = (x[a] - self.lower[a]) / (self.upper[a] - self.lower[a]);
                    let c = ((t * cells[a] as f64) as usize).min(cells[a] - 1);
                    index += c * stride;
                    stride *= cells[a];
                }
                values[index]
            }
        }
    }

    fn density_max(&self) -> f64 {
        match &self.density {
            Density::Uniform => 1.0 / self.volume(),
            Density::Tabulated { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }
}

/// A training point with its real-valued label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub position: Vec<f64>,
    pub label: f64,
}

impl LabeledPoint {
    pub fn new(position: Vec<f64>, label: f64) -> Self {
        LabeledPoint { position, label }
    }
}

/// `n` points in the domain; the first `num_labeled` carry labels.
///
/// Coordinates are stored flat, `dim` values per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    domain: Domain,
    coords: Vec<f64>,
    labels: Vec<f64>,
    seed: u64,
}

impl PointCloud {
    /// Builds a cloud from explicit coordinates. The first `labels.len()`
    /// points are the labeled ones.
    pub fn new(domain: Domain, coords: Vec<f64>, labels: Vec<f64>, seed: u64) -> Result<Self> {
        let dim = domain.dim();
        if !coords.len().is_multiple_of(dim) {
            return invalid("coordinate count is not a multiple of the dimension");
        }
        let n = coords.len() / dim;
        if labels.len() > n {
            return invalid(format!("{} labels for {n} points", labels.len()));
        }
        if labels.iter().any(|y| !y.is_finite()) {
            return invalid("labels must be finite");
        }
        for (i, x) in coords.chunks_exact(dim).enumerate() {
            if !domain.contains(x) {
                return invalid(format!("point {i} at {x:?} lies outside the domain"));
            }
        }
        let cloud = PointCloud {
            domain,
            coords,
            labels,
            seed,
        };
        for i in 0..cloud.num_labeled() {
            for j in 0..i {
                if cloud.point(i) == cloud.point(j) {
                    return invalid(format!("labeled points {j} and {i} coincide"));
                }
            }
        }
        Ok(cloud)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim())
    }

    pub fn labeled_points(&self) -> Vec<LabeledPoint> {
        (0..self.num_labeled())
            .map(|i| LabeledPoint::new(self.point(i).to_vec(), self.labels[i]))
            .collect()
    }

    /// FNV-1a over the coordinate bit patterns; identifies a cloud in sweep
    /// outputs.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |word: u64| {
            for byte in word.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.dim() as u64);
        eat(self.num_labeled() as u64);
        for v in &self.coords {
            eat(v.to_bits());
        }
        h
    }

    /// Writes `x1[,x2],label_or_nan`, labeled rows first.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv_to(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = if self.dim() == 1 {
            "x1,label_or_nan"
        } else {
            "x1,x2,label_or_nan"
        };
        writeln!(w, "{header}")?;
        for (i, x) in self.points().enumerate() {
            for v in x {
                write!(w, "{v},")?;
            }
            match self.labels.get(i) {
                Some(y) => writeln!(w, "{y}")?,
                None => writeln!(w, "nan")?,
            }
        }
        w.flush()
    }

    /// Reads a cloud written by [`PointCloud::write_csv`].
    pub fn read_csv(path: &Path, domain: Domain, seed: u64) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let dim = domain.dim();
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        let mut unlabeled_seen = false;
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::csv(path, e))?;
            if record.len() != dim + 1 {
                return invalid(format!("row {row}: expected {} columns", dim + 1));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("row {row}: bad number {s:?}")))
            };
            for k in 0..dim {
                coords.push(parse(&record[k])?);
            }
            let y = parse(&record[dim])?;
            if y.is_nan() {
                unlabeled_seen = true;
            } else if unlabeled_seen {
                return invalid(format!("row {row}: labeled rows must come first"));
            } else {
                labels.push(y);
            }
        }
        PointCloud::new(domain, coords, labels, seed)
    }
}

/// Draws `n - labeled.len()` iid points from the domain density and prepends
/// the labeled positions verbatim.
pub fn sample_cloud(domain: &Domain, labeled: &[LabeledPoint], n: usize, seed: u64) -> Result<PointCloud> {
    if n < labeled.len() {
        return invalid(format!("n = {n} is smaller than the {} labeled points", labeled.len()));
    }
    let dim = domain.dim();
    let mut coords = Vec::with_capacity(n * dim);
    for (i, lp) in labeled.iter().enumerate() {
        if !domain.contains(&lp.position) {
            return invalid(format!("labeled point {i} lies outside the domain"));
        }
        coords.extend_from_slice(&lp.position);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; dim];
    let envelope = domain.density_max();
    for _ in labeled.len()..n {
        loop {
            for a in 0..dim {
                let u: f64 = rng.random();
                x[a] = domain.lower[a] + u * (domain.upper[a] - domain.lower[a]);
            }
            match domain.density {
                Density::Uniform => break,
                Density::Tabulated { .. } => {
                    let u: f64 = rng.random();
                    if u * envelope < domain.density_at(&x) {
                        break;
                    }
                }
            }
        }
        coords.extend_from_slice(&x);
    }
    let labels = labeled.iter().map(|lp| lp.label).collect();
    PointCloud::new(domain.clone(), coords, labels, seed)
}
