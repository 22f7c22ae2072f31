//! Seeded generator of C-MAPSS formatted run-to-failure data.
//!
//! Used when the real turbofan files are not available. Units start from a
//! random initial wear, degrade along an exponential wear curve and fail when
//! wear reaches 1. Sensor means, noise levels and rounding follow the single
//! operating condition / single fault subset; seven sensors carry no wear
//! signal, and one of those toggles between two nearby values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Per-sensor shape: mean, noise sd, wear shift at failure (signed), decimals.
struct SensorModel {
    mean: f64,
    noise: f64,
    shift: f64,
    decimals: usize,
}

const fn s(mean: f64, noise: f64, shift: f64, decimals: usize) -> SensorModel {
    SensorModel {
        mean,
        noise,
        shift,
        decimals,
    }
}

const SENSORS: [SensorModel; 21] = [
    s(518.67, 0.0, 0.0, 2),
    s(642.45, 0.35, 1.6, 2),
    s(1588.9, 4.6, 22.0, 2),
    s(1404.0, 6.4, 35.0, 2),
    s(14.62, 0.0, 0.0, 2),
    s(21.605, 0.0, 0.0, 2),
    s(553.75, 0.55, -3.0, 2),
    s(2388.05, 0.05, 0.25, 2),
    s(9056.0, 6.0, 24.0, 2),
    s(1.3, 0.0, 0.0, 2),
    s(47.38, 0.18, 1.0, 2),
    s(522.0, 0.48, -2.6, 2),
    s(2388.05, 0.05, 0.25, 2),
    s(8136.0, 5.5, 20.0, 2),
    s(8.41, 0.025, 0.14, 4),
    s(0.03, 0.0, 0.0, 2),
    s(392.0, 1.1, 5.5, 0),
    s(2388.0, 0.0, 0.0, 0),
    s(100.0, 0.0, 0.0, 2),
    s(38.9, 0.13, -0.7, 2),
    s(23.34, 0.075, -0.42, 4),
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_units: usize,
    pub test_units: usize,
    pub min_life: usize,
    pub max_life: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2020,
            train_units: 100,
            test_units: 100,
            min_life: 128,
            max_life: 362,
        }
    }
}

/// Generated file contents.
pub struct SynthData {
    pub train: String,
    pub test: String,
    pub rul: String,
}

fn wear_curve(t: usize, life: usize, w0: f64, beta: f64) -> f64 {
    let x = t as f64 / life as f64;
    w0 + (1.0 - w0) * ((beta * x).exp() - 1.0) / (beta.exp() - 1.0)
}

fn unit_rows(rng: &mut ChaCha8Rng, unit: usize, life: usize, cycles: usize, out: &mut String) {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let w0 = rng.random_range(0.0..0.25);
    let beta = rng.random_range(3.0..6.0);
    // manufacturing spread, in units of each sensor's noise
    let offsets: Vec<f64> = SENSORS.iter().map(|_| 0.3 * std.sample(rng)).collect();
    for t in 1..=cycles {
        let w = wear_curve(t, life, w0, beta);
        let _ = write!(
            out,
            "{unit} {t} {:.4} {:.4} 100.0",
            0.002 * std.sample(rng),
            0.0003 * std.sample(rng)
        );
        for (j, m) in SENSORS.iter().enumerate() {
            let v = if j == 5 {
                if rng.random_bool(0.97) {
                    21.61
                } else {
                    21.6
                }
            } else {
                m.mean + m.shift * w + m.noise * (offsets[j] + std.sample(rng))
            };
            let _ = write!(out, " {v:.*}", m.decimals);
        }
        out.push_str(" \n");
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = String::new();
    for unit in 1..=cfg.train_units {
        let life = rng.random_range(cfg.min_life..=cfg.max_life);
        unit_rows(&mut rng, unit, life, life, &mut train);
    }
    let mut test = String::new();
    let mut rul = String::new();
    for unit in 1..=cfg.test_units {
        let life = rng.random_range(cfg.min_life..=cfg.max_life);
        let remaining = rng.random_range(7..=145usize).min(life - 31);
        unit_rows(&mut rng, unit, life, life - remaining, &mut test);
        let _ = writeln!(rul, "{remaining}");
    }
    SynthData { train, test, rul }
}

/// Writes `train_<subset>.txt`, `test_<subset>.txt` and `RUL_<subset>.txt`.
pub fn write_files(cfg: &SynthConfig, dir: &Path, subset: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let data = generate(cfg);
    let mut paths = Vec::new();
    for (prefix, body) in [("train", &data.train), ("test", &data.test), ("RUL", &data.rul)] {
        let p = dir.join(format!("{prefix}_{subset}.txt"));
        fs::write(&p, body)?;
        paths.push(p);
    }
    Ok(paths)
}
