//! Single-layer scalar LSTM forecaster trained with backpropagation through
//! time.
//!
//! All parameters live in one flat vector (see [`Layout`]) so that SGD,
//! gradient clipping, finite-difference checks and persistence can treat them
//! uniformly. Gate rows are ordered input, forget, candidate, output; each row
//! of the gate matrix holds the input weight followed by the recurrent weights.

use std::fmt::Write as _;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &str = "aoipdm-lstm 1";

/// How windows are divided between training and holdout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// The first `train_fraction` of every series trains, the rest is held out.
    WithinSeries,
    /// The first `train_fraction` of the series (in input order) train, the
    /// remaining series are held out whole. A single series falls back to
    /// the within-series split.
    AcrossSeries,
}

impl SplitMode {
    fn as_str(self) -> &'static str {
        match self {
            SplitMode::WithinSeries => "within-series",
            SplitMode::AcrossSeries => "across-series",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [SplitMode::WithinSeries, SplitMode::AcrossSeries].into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Windows drawn (without replacement) per epoch; 0 uses all of them.
    pub windows_per_epoch: usize,
    pub train_fraction: f64,
    pub split: SplitMode,
    pub clip_norm: f64,
    /// Standardize the series with the mean and spread of the training part.
    pub normalize: bool,
    /// Taken from the pipeline seed rather than the config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            window: 30,
            learning_rate: 1e-2,
            epochs: 200,
            batch_size: 1,
            windows_per_epoch: 2048,
            train_fraction: 0.7,
            split: SplitMode::AcrossSeries,
            clip_norm: 5.0,
            normalize: false,
            seed: 7,
        }
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub hidden: usize,
}

impl Layout {
    pub fn gate_cols(&self) -> usize {
        self.hidden + 1
    }

    pub fn gates(&self) -> std::ops::Range<usize> {
        0..4 * self.hidden * self.gate_cols()
    }

    pub fn bias(&self) -> std::ops::Range<usize> {
        let s = self.gates().end;
        s..s + 4 * self.hidden
    }

    pub fn head(&self) -> std::ops::Range<usize> {
        let s = self.bias().end;
        s..s + self.hidden
    }

    pub fn head_bias(&self) -> usize {
        self.head().end
    }

    pub fn len(&self) -> usize {
        self.head_bias() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub hidden: usize,
    pub window: usize,
    pub seed: u64,
    /// Inputs enter the network as `(x - center) / scale`; outputs are mapped
    /// back. Identity unless training standardized the series.
    pub center: f64,
    pub scale: f64,
    pub params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one forward pass, kept for the backward pass.
///
/// Flat per-step blocks: step `t` of `gates` is `[4H*t, 4H*(t+1))` holding
/// post-activation i, f, g, o; `cells` and `hiddens` hold `T + 1` blocks of
/// `H`, the first being the zero initial state.
struct Trace {
    gates: Vec<f64>,
    cells: Vec<f64>,
    hiddens: Vec<f64>,
    y: f64,
}

impl LstmModel {
    /// Uniform `[-0.08, 0.08]` weights, forget-gate bias 1.
    pub fn new(hidden: usize, window: usize, seed: u64) -> Self {
        let layout = Layout { hidden };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-0.08..=0.08)).collect();
        let b = layout.bias();
        params[b.start + hidden..b.start + 2 * hidden].fill(1.0);
        Self {
            hidden,
            window,
            seed,
            center: 0.0,
            scale: 1.0,
            params,
        }
    }

    pub fn zeros(hidden: usize, window: usize) -> Self {
        Self {
            hidden,
            window,
            seed: 0,
            center: 0.0,
            scale: 1.0,
            params: vec![0.0; Layout { hidden }.len()],
        }
    }

    pub fn layout(&self) -> Layout {
        Layout { hidden: self.hidden }
    }

    fn run(&self, window: &[f64]) -> Trace {
        let h_n = self.hidden;
        let lay = self.layout();
        let cols = lay.gate_cols();
        let w = &self.params[lay.gates()];
        let bias = &self.params[lay.bias()];
        let steps = window.len();
        let mut gates = vec![0.0; steps * 4 * h_n];
        let mut cells = vec![0.0; (steps + 1) * h_n];
        let mut hiddens = vec![0.0; (steps + 1) * h_n];
        for (t, &x) in window.iter().enumerate() {
            let h_prev = &hiddens[t * h_n..(t + 1) * h_n];
            let a = &mut gates[t * 4 * h_n..(t + 1) * 4 * h_n];
            for (r, ar) in a.iter_mut().enumerate() {
                let row = &w[r * cols..(r + 1) * cols];
                let mut acc = bias[r] + row[0] * x;
                for (wk, hk) in row[1..].iter().zip(h_prev) {
                    acc += wk * hk;
                }
                *ar = if r / h_n == 2 { acc.tanh() } else { sigmoid(acc) };
            }
            let (done, next) = cells.split_at_mut((t + 1) * h_n);
            let c_prev = &done[t * h_n..];
            let c = &mut next[..h_n];
            let h = &mut hiddens[(t + 1) * h_n..(t + 2) * h_n];
            for j in 0..h_n {
                let (i, f, g, o) = (a[j], a[h_n + j], a[2 * h_n + j], a[3 * h_n + j]);
                c[j] = f * c_prev[j] + i * g;
                h[j] = o * c[j].tanh();
            }
        }
        let head = &self.params[lay.head()];
        let last = &hiddens[steps * h_n..];
        let y = head.iter().zip(last).map(|(a, b)| a * b).sum::<f64>() + self.params[lay.head_bias()];
        Trace {
            gates,
            cells,
            hiddens,
            y,
        }
    }

    /// One-step-ahead prediction from the last `window` values.
    pub fn forward(&self, window: &[f64]) -> f64 {
        debug_assert_eq!(window.len(), self.window);
        let x: Vec<f64> = window.iter().map(|v| (v - self.center) / self.scale).collect();
        self.run(&x).y * self.scale + self.center
    }

    /// Adds `d loss / d params` for `0.5 * (y - target)^2`, scaled by
    /// `scale`, into `grad`. Returns the unscaled loss.
    fn accumulate(&self, window: &[f64], target: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let h_n = self.hidden;
        let lay = self.layout();
        let cols = lay.gate_cols();
        let w = &self.params[lay.gates()];
        let tr = self.run(window);
        let err = tr.y - target;
        let dy = err * scale;

        let t_last = window.len();
        for j in 0..h_n {
            grad[lay.head().start + j] += dy * tr.hiddens[t_last * h_n + j];
        }
        grad[lay.head_bias()] += dy;

        let head = &self.params[lay.head()];
        let mut dh: Vec<f64> = head.iter().map(|v| v * dy).collect();
        let mut dc = vec![0.0; h_n];
        let mut da = vec![0.0; 4 * h_n];
        for t in (0..t_last).rev() {
            let a = &tr.gates[t * 4 * h_n..(t + 1) * 4 * h_n];
            let c = &tr.cells[(t + 1) * h_n..(t + 2) * h_n];
            let c_prev = &tr.cells[t * h_n..(t + 1) * h_n];
            for j in 0..h_n {
                let (i, f, g, o) = (a[j], a[h_n + j], a[2 * h_n + j], a[3 * h_n + j]);
                let tc = c[j].tanh();
                let d_o = dh[j] * tc;
                dc[j] += dh[j] * o * (1.0 - tc * tc);
                da[j] = dc[j] * g * i * (1.0 - i);
                da[h_n + j] = dc[j] * c_prev[j] * f * (1.0 - f);
                da[2 * h_n + j] = dc[j] * i * (1.0 - g * g);
                da[3 * h_n + j] = d_o * o * (1.0 - o);
                dc[j] *= f;
            }
            let h_prev = &tr.hiddens[t * h_n..(t + 1) * h_n];
            let x = window[t];
            let gw = &mut grad[lay.gates()];
            for (r, &d) in da.iter().enumerate() {
                let row = &mut gw[r * cols..(r + 1) * cols];
                row[0] += d * x;
                for (g, hk) in row[1..].iter_mut().zip(h_prev) {
                    *g += d * hk;
                }
            }
            let gb = &mut grad[lay.bias()];
            for (g, d) in gb.iter_mut().zip(&da) {
                *g += d;
            }
            dh.fill(0.0);
            for (r, &d) in da.iter().enumerate() {
                let row = &w[r * cols + 1..(r + 1) * cols];
                for (dhk, wk) in dh.iter_mut().zip(row) {
                    *dhk += d * wk;
                }
            }
        }
        0.5 * err * err
    }

    /// Mean squared-error loss `mean(0.5 * (y - target)^2)` and its gradient,
    /// in network units (before the input/output scaling of [`Self::forward`]).
    pub fn loss_and_grad(&self, batch: &[(Vec<f64>, f64)]) -> (f64, Vec<f64>) {
        let n = self.layout().len();
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; n];
        let mut loss = 0.0;
        for (x, t) in batch {
            loss += self.accumulate(x, *t, scale, &mut grad) * scale;
        }
        (loss, grad)
    }

    /// Loss of [`Self::loss_and_grad`] without the gradient.
    pub fn loss(&self, batch: &[(Vec<f64>, f64)]) -> f64 {
        batch
            .iter()
            .map(|(x, t)| {
                let e = self.run(x).y - t;
                0.5 * e * e
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    pub fn rmse(&self, pairs: &[(Vec<f64>, f64)]) -> f64 {
        let mse = pairs
            .iter()
            .map(|(x, t)| (self.forward(x) - t).powi(2))
            .sum::<f64>()
            / pairs.len() as f64;
        mse.sqrt()
    }

    pub fn write(&self, cfg: &TrainConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "hidden {}", self.hidden);
        let _ = writeln!(s, "window {}", self.window);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(
            s,
            "config learning_rate={} epochs={} batch_size={} windows_per_epoch={} train_fraction={} split={} clip_norm={} normalize={}",
            cfg.learning_rate,
            cfg.epochs,
            cfg.batch_size,
            cfg.windows_per_epoch,
            cfg.train_fraction,
            cfg.split.as_str(),
            cfg.clip_norm,
            cfg.normalize
        );
        let _ = writeln!(s, "scaling {} {}", self.center, self.scale);
        let _ = writeln!(s, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(s, "{p}");
        }
        s
    }

    pub fn read(text: &str) -> Result<(Self, TrainConfig)> {
        let err = |line: usize, msg: &str| Error::Model {
            line,
            msg: msg.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&MAGIC) {
            return Err(err(1, "unsupported header"));
        }
        let field = |i: usize, key: &str| -> Result<&str> {
            lines
                .get(i)
                .and_then(|l| l.strip_prefix(key))
                .and_then(|l| l.strip_prefix(' '))
                .ok_or_else(|| err(i + 1, &format!("expected `{key}`")))
        };
        let int = |i: usize, key: &str| -> Result<u64> {
            field(i, key)?.parse().map_err(|_| err(i + 1, &format!("bad `{key}`")))
        };
        let hidden = int(1, "hidden")? as usize;
        let window = int(2, "window")? as usize;
        let seed = int(3, "seed")?;
        let mut cfg = TrainConfig {
            hidden,
            window,
            seed,
            ..TrainConfig::default()
        };
        for kv in field(4, "config")?.split(' ') {
            let (k, v) = kv.split_once('=').ok_or_else(|| err(5, "bad config entry"))?;
            let bad = || err(5, &format!("bad `{k}`"));
            match k {
                "learning_rate" => cfg.learning_rate = v.parse().map_err(|_| bad())?,
                "epochs" => cfg.epochs = v.parse().map_err(|_| bad())?,
                "batch_size" => cfg.batch_size = v.parse().map_err(|_| bad())?,
                "windows_per_epoch" => cfg.windows_per_epoch = v.parse().map_err(|_| bad())?,
                "train_fraction" => cfg.train_fraction = v.parse().map_err(|_| bad())?,
                "clip_norm" => cfg.clip_norm = v.parse().map_err(|_| bad())?,
                "split" => cfg.split = SplitMode::parse(v).ok_or_else(bad)?,
                "normalize" => cfg.normalize = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        let scaling: Vec<f64> = field(5, "scaling")?
            .split(' ')
            .map(|v| v.parse::<f64>().map_err(|_| err(6, "bad scaling")))
            .collect::<Result<_>>()?;
        let [center, scale] = scaling[..] else {
            return Err(err(6, "expected `scaling CENTER SCALE`"));
        };
        if !(scale > 0.0) || !center.is_finite() {
            return Err(err(6, "bad scaling"));
        }
        let count = int(6, "params")? as usize;
        if count != (Layout { hidden }).len() || lines.len() != 7 + count {
            return Err(err(7, "parameter count does not match dimensions"));
        }
        let params = lines[7..]
            .iter()
            .enumerate()
            .map(|(i, l)| l.parse::<f64>().map_err(|_| err(8 + i, "bad parameter")))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            Self {
                hidden,
                window,
                seed,
                center,
                scale,
                params,
            },
            cfg,
        ))
    }
}

/// Sliding windows with stride 1: `(series[i..i+w], series[i+w])`.
pub fn make_windows(series: &[f64], window: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    if window == 0 || series.len() <= window {
        return Err(Error::InsufficientData {
            len: series.len(),
            window,
        });
    }
    Ok(series
        .windows(window + 1)
        .map(|w| (w[..window].to_vec(), w[window]))
        .collect())
}

/// Training and holdout windows; see [`SplitMode`]. Within a series, a
/// window trains when its target lies before the cut.
pub fn split_windows(
    series: &[Vec<f64>],
    window: usize,
    train_fraction: f64,
    mode: SplitMode,
) -> (Vec<(Vec<f64>, f64)>, Vec<(Vec<f64>, f64)>) {
    let mut train = Vec::new();
    let mut hold = Vec::new();
    let usable: Vec<&Vec<f64>> = series.iter().filter(|s| s.len() > window).collect();
    let within = mode == SplitMode::WithinSeries || usable.len() < 2;
    let train_series = ((usable.len() as f64 * train_fraction).floor() as usize).clamp(1, usable.len().max(2) - 1);
    for (n, s) in usable.into_iter().enumerate() {
        let pairs = make_windows(s, window).expect("long enough");
        let cut = if within {
            (s.len() as f64 * train_fraction).floor() as usize
        } else if n < train_series {
            usize::MAX
        } else {
            0
        };
        for (k, p) in pairs.into_iter().enumerate() {
            if k + window < cut {
                train.push(p);
            } else {
                hold.push(p);
            }
        }
    }
    (train, hold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub holdout_rmse: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub train_windows: usize,
    pub holdout_windows: usize,
}

/// Mean and population spread of the window targets.
fn spread(pairs: &[(Vec<f64>, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let c = pairs[0].1;
    let mean = c + pairs.iter().map(|p| p.1 - c).sum::<f64>() / n;
    let var = pairs.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mini-batch SGD with global-norm clipping over the pooled training windows.
pub fn train(series: &[Vec<f64>], cfg: &TrainConfig) -> Result<(LstmModel, TrainReport)> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("bad training config {cfg:?}")));
    }
    let (train_set, hold) = split_windows(series, cfg.window, cfg.train_fraction, cfg.split);
    if train_set.is_empty() || hold.is_empty() {
        return Err(Error::InsufficientData {
            len: series.iter().map(Vec::len).max().unwrap_or(0),
            window: cfg.window,
        });
    }
    let mut model = LstmModel::new(cfg.hidden, cfg.window, cfg.seed);
    if cfg.normalize {
        let (center, spread) = spread(&train_set);
        if spread > 0.0 {
            model.center = center;
            model.scale = spread;
        }
    }
    let to_net = |(x, t): &(Vec<f64>, f64)| -> (Vec<f64>, f64) {
        (x.iter().map(|v| (v - model.center) / model.scale).collect(), (t - model.center) / model.scale)
    };
    let net_set: Vec<(Vec<f64>, f64)> = train_set.iter().map(to_net).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let per_epoch = match cfg.windows_per_epoch {
        0 => order.len(),
        n => n.min(order.len()),
    };
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; model.layout().len()];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in order[..per_epoch].chunks(cfg.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &i in chunk {
                let (x, t) = &net_set[i];
                loss += model.accumulate(x, *t, scale, &mut grad) * scale;
            }
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += loss * chunk.len() as f64;
            seen += chunk.len();
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
        let mean = total / seen as f64;
        if !mean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        debug!("epoch {epoch}: loss {mean:.6e}");
        losses.push(mean);
    }
    let holdout_rmse = model.rmse(&hold);
    Ok((
        model,
        TrainReport {
            holdout_rmse,
            epoch_losses: losses,
            train_windows: train_set.len(),
            holdout_windows: hold.len(),
        },
    ))
}

/// Largest relative error between analytic and central-difference gradients.
pub fn gradient_check(model: &LstmModel, batch: &[(Vec<f64>, f64)]) -> f64 {
    gradient_check_with(model, batch, |_, _| {})
}

/// As [`gradient_check`], letting `tamper` alter the analytic gradient first
/// (used to confirm the check notices broken gradients).
pub fn gradient_check_with(
    model: &LstmModel,
    batch: &[(Vec<f64>, f64)],
    tamper: impl FnOnce(&mut [f64], Layout),
) -> f64 {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let (_, mut analytic) = model.loss_and_grad(batch);
    tamper(&mut analytic, model.layout());
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for k in 0..probe.params.len() {
        let orig = probe.params[k];
        probe.params[k] = orig + STEP;
        let up = probe.loss(batch);
        probe.params[k] = orig - STEP;
        let down = probe.loss(batch);
        probe.params[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub values: Vec<f64>,
    /// `stop` never fired within the horizon cap.
    pub capped: bool,
}

/// Closed-loop roll-forward: each prediction is appended to the history and
/// fed back. `stop` sees the whole extended series (seed plus predictions).
pub fn forecast(
    model: &LstmModel,
    seed: &[f64],
    mut stop: impl FnMut(&[f64]) -> bool,
    horizon_cap: usize,
) -> Result<Forecast> {
    if seed.len() < model.window {
        return Err(Error::InsufficientData {
            len: seed.len(),
            window: model.window,
        });
    }
    let mut ext = seed.to_vec();
    for _ in 0..horizon_cap {
        let next = model.forward(&ext[ext.len() - model.window..]);
        ext.push(next);
        if stop(&ext) {
            return Ok(Forecast {
                values: ext[seed.len()..].to_vec(),
                capped: false,
            });
        }
    }
    Ok(Forecast {
        values: ext[seed.len()..].to_vec(),
        capped: true,
    })
}
