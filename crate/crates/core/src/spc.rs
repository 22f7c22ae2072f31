//! EWMA control chart and Western Electric run rules.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwmaParams {
    pub lambda: f64,
    /// Width of the limits in standard errors.
    pub l: f64,
    /// Rational subgroup size.
    pub n: usize,
    pub mu0: f64,
    pub sigma: f64,
}

impl EwmaParams {
    pub fn new(lambda: f64, l: f64, n: usize, mu0: f64, sigma: f64) -> Result<Self> {
        let p = Self {
            lambda,
            l,
            n,
            mu0,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!("lambda {} not in (0, 1]", self.lambda)));
        }
        if !(self.l > 0.0) || self.n == 0 || !(self.sigma >= 0.0) || !self.mu0.is_finite() {
            return Err(Error::InvalidParameter(format!("bad EWMA parameters {self:?}")));
        }
        Ok(())
    }

    /// Same chart with a new baseline.
    pub fn with_baseline(self, mu0: f64, sigma: f64) -> Self {
        Self { mu0, sigma, ..self }
    }
}

/// Sigma used for limits and zones: a zero baseline spread is replaced by a
/// tiny floor so that any deviation counts.
pub fn effective_sigma(mu0: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        return sigma;
    }
    let floor = (f64::EPSILON * mu0.abs().max(1.0)).max(1e-12);
    warn!("zero baseline sigma around {mu0}; using floor {floor:e}");
    floor
}

/// Mean and sample standard deviation of the first `n_baseline` points.
pub fn fit_baseline(series: &[f64], n_baseline: usize) -> Result<(f64, f64)> {
    if n_baseline < 2 {
        return Err(Error::InvalidParameter(format!("baseline of {n_baseline} points")));
    }
    if series.len() < n_baseline {
        return Err(Error::InsufficientBaseline {
            len: series.len(),
            needed: n_baseline,
        });
    }
    let base = &series[..n_baseline];
    // shifted by the first point so constant baselines give an exact mean
    let mean = base[0] + base.iter().map(|x| x - base[0]).sum::<f64>() / n_baseline as f64;
    let var = base.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_baseline - 1) as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EwmaSeries {
    pub z: Vec<f64>,
    pub params: EwmaParams,
}

/// `z[i] = lambda * x[i] + (1 - lambda) * z[i-1]`, seeded with `mu0`.
pub fn ewma_transform(x: &[f64], params: EwmaParams) -> EwmaSeries {
    let mut prev = params.mu0;
    let z = x
        .iter()
        .map(|&xi| {
            // same recursion, arranged so that constant input and lambda = 1
            // reproduce x exactly
            prev = if params.lambda == 1.0 { xi } else { prev + params.lambda * (xi - prev) };
            prev
        })
        .collect();
    EwmaSeries { z, params }
}

/// `(LCL, UCL)` at the 1-based sample number `i`.
pub fn control_limits(params: &EwmaParams, i: usize) -> (f64, f64) {
    let half = limit_half_width(params, params.sigma, i);
    (params.mu0 - half, params.mu0 + half)
}

fn limit_half_width(p: &EwmaParams, sigma: f64, i: usize) -> f64 {
    let lam = p.lambda;
    let decay = (1.0 - lam).powf(2.0 * i as f64);
    p.l * (sigma / (p.n as f64).sqrt()) * ((lam / (2.0 - lam)) * (1.0 - decay)).sqrt()
}

/// Limit approached as `i` grows.
pub fn asymptotic_ucl(params: &EwmaParams) -> f64 {
    params.mu0
        + params.l * (params.sigma / (params.n as f64).sqrt()) * (params.lambda / (2.0 - params.lambda)).sqrt()
}

/// First index after the baseline window whose EWMA value leaves the limits.
///
/// Index `k` of the series is sample number `k + 1` for the limits. With
/// `two_sided` false only the upper limit is checked.
pub fn detect_change_point(ewma: &EwmaSeries, baseline_len: usize, two_sided: bool) -> Option<usize> {
    let p = &ewma.params;
    let sigma = effective_sigma(p.mu0, p.sigma);
    ewma.z
        .iter()
        .enumerate()
        .skip(baseline_len)
        .find(|&(k, &z)| {
            let half = limit_half_width(p, sigma, k + 1);
            z > p.mu0 + half || (two_sided && z < p.mu0 - half)
        })
        .map(|(k, _)| k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Above,
    Below,
    Both,
}

/// One of the four Western Electric run rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WerRule {
    pub id: u8,
    pub direction: Direction,
}

impl WerRule {
    pub const ALL: [u8; 4] = [1, 2, 3, 4];

    pub fn new(id: u8, direction: Direction) -> Result<Self> {
        if !(1..=4).contains(&id) {
            return Err(Error::InvalidParameter(format!("no run rule {id}")));
        }
        Ok(Self { id, direction })
    }

    pub fn upper(id: u8) -> Self {
        Self::new(id, Direction::Above).expect("rule id in 1..=4")
    }

    /// `(points needed, window length, zone in sigmas)`.
    fn shape(&self) -> (usize, usize, f64) {
        match self.id {
            1 => (1, 1, 3.0),
            2 => (2, 2, 2.0),
            3 => (3, 4, 1.0),
            _ => (8, 8, 0.0),
        }
    }
}

/// First index `>= start` at which the rule's condition completes.
///
/// Rule 1: one point beyond 3 sigma. Rule 2: two consecutive points beyond
/// 2 sigma. Rule 3: three of (up to) the last four points beyond 1 sigma.
/// Rule 4: eight consecutive points strictly beyond the centre line. Only
/// points at or after `start` count, and all points of a run must be on the
/// same side.
pub fn evaluate_wer(rule: WerRule, x: &[f64], mu0: f64, sigma: f64, start: usize) -> Option<usize> {
    let sides: &[f64] = match rule.direction {
        Direction::Above => &[1.0],
        Direction::Below => &[-1.0],
        Direction::Both => &[1.0, -1.0],
    };
    sides
        .iter()
        .filter_map(|&side| first_run(rule, x, mu0, sigma, start, side))
        .min()
}

fn first_run(rule: WerRule, x: &[f64], mu0: f64, sigma: f64, start: usize, side: f64) -> Option<usize> {
    let (needed, window, zone) = rule.shape();
    let sigma = if zone > 0.0 { effective_sigma(mu0, sigma) } else { sigma };
    let beyond = |v: f64| side * (v - mu0) > zone * sigma;
    let mut hits = std::collections::VecDeque::with_capacity(window);
    let mut count = 0;
    for (i, &v) in x.iter().enumerate().skip(start) {
        let b = beyond(v);
        hits.push_back(b);
        count += usize::from(b);
        if hits.len() > window && hits.pop_front() == Some(true) {
            count -= 1;
        }
        if count >= needed {
            return Some(i);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64) -> EwmaParams {
        EwmaParams::new(lambda, 3.0, 1, 0.4, 0.05).unwrap()
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(fit_baseline(&[0.7; 100], 100).unwrap(), (0.7, 0.0));
        let (m, s) = fit_baseline(&[0.0, 1.0], 2).unwrap();
        assert_eq!(m, 0.5);
        assert!((s - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            fit_baseline(&[1.0; 5], 6),
            Err(Error::InsufficientBaseline { len: 5, needed: 6 })
        ));
    }

    #[test]
    fn ewma_examples() {
        let x = [0.1, 0.9, 0.3];
        assert_eq!(ewma_transform(&x, params(1.0)).z, x.to_vec());
        let p = EwmaParams::new(0.2, 3.0, 1, 0.0, 1.0).unwrap();
        assert!((ewma_transform(&[1.0], p).z[0] - 0.2).abs() < 1e-15);
        assert!(ewma_transform(&[0.4; 50], params(0.2)).z.iter().all(|&z| z == 0.4));
    }

    #[test]
    fn limits() {
        let p = params(1.0);
        for i in [1, 2, 50] {
            let (lcl, ucl) = control_limits(&p, i);
            assert_eq!(ucl, 0.4 + 3.0 * 0.05);
            assert_eq!(lcl, 0.4 - 3.0 * 0.05);
        }
        let p = params(0.2);
        assert!((control_limits(&p, 10_000).1 - asymptotic_ucl(&p)).abs() < 1e-9);
        let flat = EwmaParams::new(0.2, 3.0, 1, 0.4, 0.0).unwrap();
        assert_eq!(control_limits(&flat, 3), (0.4, 0.4));
        assert!(EwmaParams::new(0.0, 3.0, 1, 0.0, 1.0).is_err());
        assert!(EwmaParams::new(0.2, 3.0, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn change_point_after_baseline() {
        let p = params(0.2);
        let mut x = vec![0.4; 200];
        assert_eq!(detect_change_point(&ewma_transform(&x, p), 100, false), None);
        // step well above the limit at 120: one EWMA step moves 0.2 * 0.6
        for v in &mut x[120..] {
            *v = 1.0;
        }
        let ucl = control_limits(&p, 121).1;
        assert!(0.4 + 0.2 * 0.6 > ucl);
        assert_eq!(detect_change_point(&ewma_transform(&x, p), 100, false), Some(120));
        // excursion inside the baseline is ignored
        let mut y = vec![0.4; 200];
        y[10] = 5.0;
        let e = ewma_transform(&y, p);
        assert!(e.z[10] > control_limits(&p, 11).1);
        assert_eq!(detect_change_point(&e, 100, false), None);
        // lower excursions only count when two-sided
        let mut w = vec![0.4; 200];
        w[150] = -3.0;
        assert_eq!(detect_change_point(&ewma_transform(&w, p), 100, false), None);
        assert_eq!(detect_change_point(&ewma_transform(&w, p), 100, true), Some(150));
    }

    #[test]
    fn rule_examples() {
        let (mu, sd) = (0.0, 1.0);
        let mut x = vec![-0.5; 30];
        for v in &mut x[10..] {
            *v = 0.01;
        }
        assert_eq!(evaluate_wer(WerRule::upper(4), &x, mu, sd, 0), Some(17));

        let mut spike = vec![0.0; 30];
        spike[12] = 4.0;
        assert_eq!(evaluate_wer(WerRule::upper(1), &spike, mu, sd, 0), Some(12));
        assert_eq!(evaluate_wer(WerRule::upper(1), &spike, mu, sd, 13), None);

        let mut three = vec![0.0; 30];
        for (i, v) in [1.5, 1.5, 0.2, 1.5].iter().enumerate() {
            three[5 + i] = *v;
        }
        assert_eq!(evaluate_wer(WerRule::upper(3), &three, mu, sd, 0), Some(8));

        // rule 2 needs two in a row, not two of three
        let two_of_three = [0.0, 2.5, 0.0, 2.5, 0.0];
        assert_eq!(evaluate_wer(WerRule::upper(2), &two_of_three, mu, sd, 0), None);
        assert_eq!(evaluate_wer(WerRule::upper(2), &[0.0, 2.5, 2.5], mu, sd, 0), Some(2));
        // sides never mix
        let mixed = [2.5, -2.5, 2.5, -2.5];
        assert_eq!(evaluate_wer(WerRule::new(2, Direction::Both).unwrap(), &mixed, mu, sd, 0), None);
        assert_eq!(evaluate_wer(WerRule::new(1, Direction::Below).unwrap(), &[0.0, -3.5], mu, sd, 0), Some(1));
    }
}
