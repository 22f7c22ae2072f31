//! C-MAPSS style run-to-failure files and their preprocessing.
//!
//! Each row is `unit cycle setting1..3 s1..s21`, whitespace separated. Rows
//! are grouped per unit and must carry contiguous cycles starting at 1.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const N_SETTINGS: usize = 3;
pub const N_SENSORS: usize = 21;
pub const N_ATTRS: usize = N_SETTINGS + N_SENSORS;
pub const N_COLUMNS: usize = N_ATTRS + 2;

/// `setting1..setting3` then `s1..s21`.
pub fn attribute_name(i: usize) -> String {
    if i < N_SETTINGS {
        format!("setting{}", i + 1)
    } else {
        format!("s{}", i - N_SETTINGS + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub cycle: u32,
    /// All 24 attributes: settings first, then sensors.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub unit: u32,
    pub cycles: Vec<Cycle>,
}

impl Simulation {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Rows restricted to the `retained` attribute indexes.
    pub fn rows(&self, retained: &[usize]) -> Vec<Vec<f64>> {
        self.cycles
            .iter()
            .map(|c| retained.iter().map(|&i| c.values[i]).collect())
            .collect()
    }

    /// First `n` cycles as a new simulation.
    pub fn truncated(&self, n: usize) -> Simulation {
        Simulation {
            unit: self.unit,
            cycles: self.cycles[..n.min(self.cycles.len())].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub simulations: Vec<Simulation>,
    /// Indexes into the 24 attributes, ascending.
    pub retained: Vec<usize>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn retained_names(&self) -> Vec<String> {
        self.retained.iter().map(|&i| attribute_name(i)).collect()
    }

    pub fn num_rows(&self) -> usize {
        self.simulations.iter().map(Simulation::len).sum()
    }

    /// Same simulations, different retained set (train-derived sets are
    /// applied to test data this way).
    pub fn with_retained(mut self, retained: &[usize]) -> Self {
        self.retained = retained.to_vec();
        self
    }
}

pub fn load_cmapss(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Load {
        path: path.to_path_buf(),
        line: 0,
        msg: "not UTF-8 text".into(),
    })?;
    let mut ds = parse_cmapss(&text, path)?;
    ds.provenance = Some(Provenance {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    });
    info!("loaded {} units ({} rows) from {}", ds.simulations.len(), ds.num_rows(), path.display());
    Ok(ds)
}

pub fn parse_cmapss(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, msg: String| Error::Load {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut units: BTreeMap<u32, Vec<(usize, Cycle)>> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != N_COLUMNS {
            return Err(err(line, format!("{} columns, expected {N_COLUMNS}", fields.len())));
        }
        let int = |s: &str| -> Result<u32> {
            s.parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v <= u32::MAX as f64)
                .map(|v| v as u32)
                .ok_or_else(|| err(line, format!("bad integer field `{s}`")))
        };
        let unit = int(fields[0])?;
        let cycle = int(fields[1])?;
        let values = fields[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(line, format!("non-numeric field `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        units.entry(unit).or_default().push((line, Cycle { cycle, values }));
    }
    if units.is_empty() {
        return Err(err(0, "no data rows".into()));
    }
    let mut simulations = Vec::with_capacity(units.len());
    for (unit, mut rows) in units {
        rows.sort_by_key(|(_, c)| c.cycle);
        for (i, (line, c)) in rows.iter().enumerate() {
            if c.cycle as usize != i + 1 {
                return Err(err(
                    *line,
                    format!("unit {unit}: cycle {} where {} was expected", c.cycle, i + 1),
                ));
            }
        }
        simulations.push(Simulation {
            unit,
            cycles: rows.into_iter().map(|(_, c)| c).collect(),
        });
    }
    Ok(Dataset {
        simulations,
        retained: (0..N_ATTRS).collect(),
        provenance: None,
    })
}

pub fn drop_operational_settings(mut ds: Dataset) -> Dataset {
    ds.retained.retain(|&i| i >= N_SETTINGS);
    ds
}

/// Drops retained attributes whose range over every simulation is at most
/// `tolerance`.
pub fn drop_constant_attributes(mut ds: Dataset, tolerance: f64) -> Result<Dataset> {
    let before = ds.retained.len();
    ds.retained.retain(|&i| {
        let (lo, hi) = ds
            .simulations
            .iter()
            .flat_map(|s| s.cycles.iter().map(move |c| c.values[i]))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo > tolerance
    });
    if ds.retained.is_empty() {
        return Err(Error::NoFeatures);
    }
    info!(
        "kept {} of {before} attributes after constant filter: {}",
        ds.retained.len(),
        ds.retained_names().join(" ")
    );
    Ok(ds)
}

/// One non-negative RUL per test unit, in unit order.
pub fn load_rul_truth(path: impl AsRef<Path>, expected_units: usize) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_rul_truth(&text, path, expected_units)
}

pub fn parse_rul_truth(text: &str, path: &Path, expected_units: usize) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        let v = t
            .parse::<f64>()
            .ok()
            .filter(|v| *v >= 0.0 && v.fract() == 0.0)
            .ok_or_else(|| Error::Load {
                path: path.to_path_buf(),
                line: n + 1,
                msg: format!("RUL must be a non-negative integer, got `{t}`"),
            })?;
        out.push(v as u32);
    }
    if out.len() != expected_units {
        return Err(Error::Alignment {
            expected: expected_units,
            found: out.len(),
        });
    }
    Ok(out)
}
