//! Flat `key = value` sweep configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated; labels are `;`-separated `coords:label` entries, e.g.
//! `labels = 0.2,0.5:0; 0.8,0.5:1`. Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use super::{EpsGrid, Model, Reference, SweepConfig};
use crate::continuum::DEFAULT_GRID_SIZE;
use crate::energy::DEFAULT_RADIUS_MULTIPLIER;
use crate::error::{Error, Result};
use crate::graph::KernelProfile;
use crate::sampling::{Domain, LabeledPoint};

pub const KEYS: &[&str] = &[
    "dim",
    "lower",
    "upper",
    "labels",
    "kernel",
    "support",
    "model",
    "p",
    "q",
    "lambda",
    "radius_multiplier",
    "ns",
    "eps",
    "eps_min",
    "eps_max",
    "eps_count",
    "eps_conn_lower",
    "eps_conn_upper",
    "eps_cap",
    "realizations",
    "seed",
    "max_sweeps",
    "rel_energy_tol",
    "coord_tol",
    "clip_to_labels",
    "reference",
    "grid_size",
    "spike_alpha",
    "smooth_window",
];

/// Raw entries with the line each came from (0 for overrides).
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(cfg_err(i + 1, format!("expected `key = value`, got `{line}`")));
            };
            let key = k.trim();
            if !KEYS.contains(&key) {
                return Err(cfg_err(i + 1, format!("unknown key `{key}`")));
            }
            if map.entries.contains_key(key) {
                return Err(cfg_err(i + 1, format!("key `{key}` given twice")));
            }
            map.entries.insert(key.to_string(), (i + 1, v.trim().to_string()));
        }
        Ok(map)
    }

    /// Replaces or adds an entry, as command-line overrides do.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(cfg_err(0, format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), (0, value.trim().to_string()));
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&(usize, String)> {
        self.entries.get(key)
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| cfg_err(*line, format!("cannot parse `{v}` for `{key}`"))),
        }
    }

    fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| cfg_err(*line, format!("bad entry `{s}` in `{key}`")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn build(&self) -> Result<SweepConfig> {
        let mut c = SweepConfig::default();
        let lower: Option<Vec<f64>> = self.parse_list("lower")?;
        let upper: Option<Vec<f64>> = self.parse_list("upper")?;
        let dim = match (self.parse_value::<usize>("dim")?, &lower) {
            (Some(d), _) => d,
            (None, Some(l)) => l.len(),
            (None, None) => 1,
        };
        let at = |key: &str| self.get(key).map_or(0, |e| e.0);
        c.domain = Domain::uniform(
            lower.unwrap_or_else(|| vec![0.0; dim]),
            upper.unwrap_or_else(|| vec![1.0; dim]),
        )
        .map_err(|e| cfg_err(at("lower").max(at("upper")), e.to_string()))?;
        if dim != c.domain.dim() {
            return Err(cfg_err(at("dim"), "dim disagrees with lower/upper"));
        }
        c.labeled = match self.get("labels") {
            Some((line, v)) => parse_labels(v).map_err(|m| cfg_err(*line, m))?,
            None if dim == 1 => c.labeled,
            None => vec![
                LabeledPoint::new(vec![0.2, 0.5], 0.0),
                LabeledPoint::new(vec![0.8, 0.5], 1.0),
            ],
        };
        let support = self.parse_value::<f64>("support")?.unwrap_or(1.0);
        c.kernel = match self.get("kernel").map(|e| e.1.as_str()) {
            None | Some("indicator") => KernelProfile::indicator(support),
            Some("exp") | Some("exponential") => Ok(KernelProfile::exponential()),
            Some(other) => return Err(cfg_err(at("kernel"), format!("unknown kernel `{other}`"))),
        }
        .map_err(|e| cfg_err(at("support"), e.to_string()))?;
        c.p = self.parse_value("p")?.unwrap_or(c.p);
        let q = self.parse_value("q")?.unwrap_or(2.0);
        let lambda = self.parse_value("lambda")?.unwrap_or(1.0);
        let radius_multiplier = self
            .parse_value("radius_multiplier")?
            .unwrap_or(DEFAULT_RADIUS_MULTIPLIER);
        c.model = match self.get("model").map(|e| e.1.as_str()) {
            None | Some("constrained") => Model::Constrained,
            Some("penalized") => Model::Penalized { q, lambda },
            Some("improved") => Model::Improved { radius_multiplier },
            Some(other) => return Err(cfg_err(at("model"), format!("unknown model `{other}`"))),
        };
        if let Some(ns) = self.parse_list("ns")? {
            c.ns = ns;
        }
        c.eps_grid = self.eps_grid(dim)?;
        c.realizations = self.parse_value("realizations")?.unwrap_or(c.realizations);
        c.base_seed = self.parse_value("seed")?.unwrap_or(c.base_seed);
        c.solve.max_sweeps = self.parse_value("max_sweeps")?.unwrap_or(c.solve.max_sweeps);
        c.solve.rel_energy_tol = self.parse_value("rel_energy_tol")?.unwrap_or(c.solve.rel_energy_tol);
        c.solve.coord_tol = self.parse_value("coord_tol")?.unwrap_or(c.solve.coord_tol);
        c.solve.clip_to_labels = self.parse_value("clip_to_labels")?.unwrap_or(c.solve.clip_to_labels);
        let cells = self.parse_value("grid_size")?.unwrap_or(DEFAULT_GRID_SIZE);
        c.reference = match self.get("reference").map(|e| e.1.as_str()) {
            None if dim == 1 => Reference::Analytic1d,
            None => Reference::Grid2d { cells },
            Some("analytic_1d") => Reference::Analytic1d,
            Some("grid_2d") => Reference::Grid2d { cells },
            Some("constant_infimum") => Reference::ConstantInfimum,
            Some(other) => return Err(cfg_err(at("reference"), format!("unknown reference `{other}`"))),
        };
        c.spike_alpha = self.parse_value("spike_alpha")?.unwrap_or(c.spike_alpha);
        c.smooth_window = self.parse_value("smooth_window")?.unwrap_or(c.smooth_window);
        c.validate().map_err(|e| cfg_err(0, e.to_string()))?;
        Ok(c)
    }

    fn eps_grid(&self, dim: usize) -> Result<EpsGrid> {
        let has = |keys: &[&str]| keys.iter().any(|k| self.get(k).is_some());
        let explicit = has(&["eps"]);
        let ranged = has(&["eps_min", "eps_max"]);
        let relative = has(&["eps_conn_lower", "eps_conn_upper", "eps_cap"]);
        if [explicit, ranged, relative].iter().filter(|&&b| b).count() > 1 {
            return Err(cfg_err(0, "give only one of eps, eps_min/eps_max, eps_conn_* grids"));
        }
        let count = self.parse_value("eps_count")?.unwrap_or(40);
        if explicit {
            return Ok(EpsGrid::Explicit(self.parse_list("eps")?.unwrap()));
        }
        if ranged {
            let (Some(min), Some(max)) = (self.parse_value("eps_min")?, self.parse_value("eps_max")?) else {
                return Err(cfg_err(0, "eps_min and eps_max go together"));
            };
            return Ok(EpsGrid::LogSpaced { min, max, count });
        }
        Ok(EpsGrid::ConnRelative {
            lower_factor: self.parse_value("eps_conn_lower")?.unwrap_or(0.5),
            upper_factor: self.parse_value("eps_conn_upper")?.unwrap_or(f64::INFINITY),
            cap: self
                .parse_value("eps_cap")?
                .unwrap_or(if dim == 1 { 0.5 } else { 0.35 }),
            count,
        })
    }
}

fn cfg_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn parse_labels(v: &str) -> std::result::Result<Vec<LabeledPoint>, String> {
    v.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|entry| {
            let (pos, label) = entry
                .split_once(':')
                .ok_or_else(|| format!("label entry `{entry}` lacks `:`"))?;
            let position = pos
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad coordinate `{s}`")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let label = label.trim().parse().map_err(|_| format!("bad label `{label}`"))?;
            Ok(LabeledPoint::new(position, label))
        })
        .collect()
}

pub fn parse_config(text: &str) -> Result<SweepConfig> {
    ConfigMap::parse(text)?.build()
}

/// Reads a config file and applies `key=value` overrides on top.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<SweepConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = ConfigMap::parse(&text)?;
    for (k, v) in overrides {
        map.set(k, v)?;
    }
    map.build()
}
