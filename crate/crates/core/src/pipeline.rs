//! Training and test phases: hierarchies, AOI knowledge base, quantification,
//! EWMA change detection, run-rule selection and LSTM-based RUL estimates.
//!
//! Indexes into a simulation are 0-based; index `k` is cycle `k + 1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aoi::run_aoi;
use crate::config::{PipelineConfig, RulReference};
use crate::dataio::{attribute_name, drop_constant_attributes, drop_operational_settings, Dataset, Simulation};
use crate::error::{Error, Result, StageExt};
use crate::hierarchy::{build_percentile_hierarchy, parse_hierarchy_config, HierarchySet, RangePolicy};
use crate::kb::KnowledgeBase;
use crate::lstm::{forecast, train, LstmModel};
use crate::quantify::{QuantificationSeries, Quantifier};
use crate::spc::{control_limits, detect_change_point, ewma_transform, fit_baseline, evaluate_wer, EwmaParams, WerRule};

pub const HIERARCHY_FILE: &str = "hierarchy.cfg";
pub const KB_FILE: &str = "knowledge_base.kb";
pub const MODEL_FILE: &str = "model.lstm";
pub const TRAINING_FILE: &str = "training.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleErrors {
    pub rule: u8,
    pub mae: f64,
    pub mse: f64,
    /// Simulations on which the rule never fired (charged the penalty).
    pub non_triggering: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerSelection {
    pub selected: WerRule,
    pub rules: Vec<RuleErrors>,
}

impl WerSelection {
    pub fn table(&self) -> String {
        let mut s = format!("{:<6}{:>12}{:>14}{:>16}\n", "rule", "MAE", "MSE", "non-triggering");
        for r in &self.rules {
            let mark = if r.rule == self.selected.id { " *" } else { "" };
            let _ = writeln!(s, "{:<6}{:>12.2}{:>14.2}{:>16}{mark}", format!("WER{}", r.rule), r.mae, r.mse, r.non_triggering);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub training_units: usize,
    pub training_rows: usize,
    pub clusters: usize,
    pub relation_groups: usize,
    pub residual_rows: usize,
    pub forced_extractions: usize,
    pub holdout_rmse: f64,
    pub final_train_loss: f64,
    pub train_windows: usize,
    pub holdout_windows: usize,
}

/// Everything the test phase needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedArtifacts {
    pub config: PipelineConfig,
    /// Dataset attribute indexes, in hierarchy order.
    pub retained: Vec<usize>,
    pub hierarchies: HierarchySet,
    pub kb: KnowledgeBase,
    /// Chart defaults; `mu0`/`sigma` are pooled over the training baselines
    /// and used for simulations too short for their own baseline.
    pub ewma: EwmaParams,
    pub model: LstmModel,
    pub rule: WerRule,
    pub selection: WerSelection,
    pub summary: TrainSummary,
}

#[derive(Serialize, Deserialize)]
struct TrainingRecord {
    retained: Vec<usize>,
    retained_names: Vec<String>,
    ewma: EwmaParams,
    rule: WerRule,
    summary: TrainSummary,
    selection: WerSelection,
    config: PipelineConfig,
}

impl TrainedArtifacts {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(HIERARCHY_FILE), self.hierarchies.to_config())?;
        fs::write(dir.join(KB_FILE), self.kb.write(&self.hierarchies))?;
        fs::write(dir.join(MODEL_FILE), self.model.write(&self.config.lstm_config()))?;
        let record = TrainingRecord {
            retained: self.retained.clone(),
            retained_names: self.retained.iter().map(|&i| attribute_name(i)).collect(),
            ewma: self.ewma,
            rule: self.rule,
            summary: self.summary.clone(),
            selection: self.selection.clone(),
            config: self.config.clone(),
        };
        let text = toml::to_string(&record).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        fs::write(dir.join(TRAINING_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let record: TrainingRecord = toml::from_str(&fs::read_to_string(dir.join(TRAINING_FILE))?)?;
        let policy = policy(&record.config);
        let hierarchies = HierarchySet::new(
            parse_hierarchy_config(&fs::read_to_string(dir.join(HIERARCHY_FILE))?)?,
            policy,
        )?;
        if hierarchies.len() != record.retained.len() {
            return Err(Error::InvalidParameter(format!(
                "{} hierarchies for {} retained attributes",
                hierarchies.len(),
                record.retained.len()
            )));
        }
        let kb = KnowledgeBase::read(&fs::read_to_string(dir.join(KB_FILE))?, &hierarchies)?;
        let (model, _) = LstmModel::read(&fs::read_to_string(dir.join(MODEL_FILE))?)?;
        Ok(Self {
            config: record.config,
            retained: record.retained,
            hierarchies,
            kb,
            ewma: record.ewma,
            model,
            rule: record.rule,
            selection: record.selection,
            summary: record.summary,
        })
    }

    /// Applies the training-derived attribute set to another dataset.
    pub fn restrict(&self, ds: Dataset) -> Dataset {
        ds.with_retained(&self.retained)
    }

    pub fn quantify(&self, sim: &Simulation) -> Result<QuantificationSeries> {
        Quantifier::new(&self.kb, &self.hierarchies).quantify(sim.unit, &sim.rows(&self.retained))
    }

    pub fn quantify_all(&self, sims: &[Simulation]) -> Result<Vec<QuantificationSeries>> {
        let q = Quantifier::new(&self.kb, &self.hierarchies);
        sims.par_iter().map(|s| q.quantify(s.unit, &s.rows(&self.retained))).collect()
    }
}

fn policy(cfg: &PipelineConfig) -> RangePolicy {
    if cfg.hierarchy.strict {
        RangePolicy::Strict
    } else {
        RangePolicy::Clamp
    }
}

/// Drops the operational settings and the attributes that are constant over
/// the training data.
pub fn preprocess_training(ds: Dataset, tolerance: f64) -> Result<Dataset> {
    drop_constant_attributes(drop_operational_settings(ds), tolerance)
}

fn build_hierarchies(ds: &Dataset, cfg: &PipelineConfig) -> Result<(Vec<usize>, HierarchySet)> {
    let policy = policy(cfg);
    if let Some(path) = &cfg.hierarchy.file {
        let hs = HierarchySet::new(parse_hierarchy_config(&fs::read_to_string(path)?)?, policy)?;
        let names = ds.retained_names();
        let got: Vec<&str> = hs.hierarchies.iter().map(|h| h.schema.name.as_str()).collect();
        if got != names {
            return Err(Error::InvalidParameter(format!(
                "hierarchy file covers {got:?}, retained attributes are {names:?}"
            )));
        }
        return Ok((ds.retained.clone(), hs));
    }
    let mut retained = Vec::new();
    let mut hierarchies = Vec::new();
    for &attr in &ds.retained {
        let column: Vec<f64> = ds.simulations.iter().flat_map(|s| s.cycles.iter().map(|c| c.values[attr])).collect();
        let name = attribute_name(attr);
        match build_percentile_hierarchy(&name, hierarchies.len(), &column, cfg.hierarchy.num_levels, cfg.hierarchy.base_bins) {
            Ok(h) => {
                retained.push(attr);
                hierarchies.push(h);
            }
            Err(Error::DegenerateBins { distinct, bins, .. }) => {
                warn!("dropping {name}: {distinct} distinct values for {bins} bins");
            }
            Err(e) => return Err(e),
        }
    }
    if hierarchies.is_empty() {
        return Err(Error::NoFeatures);
    }
    Ok((retained, HierarchySet::new(hierarchies, policy)?))
}

/// Mean and spread of the pooled baseline windows of all simulations long
/// enough to have one.
fn pooled_baseline(series: &[Vec<f64>], n_baseline: usize) -> Result<(f64, f64)> {
    let pooled: Vec<f64> = series
        .iter()
        .filter(|s| s.len() >= n_baseline)
        .flat_map(|s| s[..n_baseline].iter().copied())
        .collect();
    fit_baseline(&pooled, pooled.len().max(2))
}

/// Chart parameters and the length of the baseline window for one series.
fn chart_for(x: &[f64], art_ewma: EwmaParams, n_baseline: usize) -> Result<(EwmaParams, usize, bool)> {
    if x.len() >= n_baseline {
        let (mu0, sigma) = fit_baseline(x, n_baseline)?;
        Ok((art_ewma.with_baseline(mu0, sigma), n_baseline, false))
    } else {
        Ok((art_ewma, 0, true))
    }
}

/// Change point of one series, with the chart used to find it.
pub struct Detection {
    pub params: EwmaParams,
    pub baseline_len: usize,
    /// The series was too short for its own baseline.
    pub fallback: bool,
    pub change_point: Option<usize>,
}

pub fn detect(x: &[f64], ewma: EwmaParams, n_baseline: usize, two_sided: bool) -> Result<Detection> {
    let (params, baseline_len, fallback) = chart_for(x, ewma, n_baseline)?;
    let change_point = detect_change_point(&ewma_transform(x, params), baseline_len, two_sided);
    Ok(Detection {
        params,
        baseline_len,
        fallback,
        change_point,
    })
}

/// Scores every rule on run-to-failure series (failure = last cycle) and
/// picks the lowest MAE, then lowest MSE, then the highest rule id.
///
/// Rules are scanned from the change point (or the end of the baseline when
/// none is found). A rule that never fires is charged the distance from that
/// start to the failure.
pub fn select_wer(series: &[Vec<f64>], ewma: EwmaParams, cfg: &PipelineConfig) -> Result<WerSelection> {
    if series.is_empty() {
        return Err(Error::EmptyInput("validation simulations"));
    }
    let starts = series
        .iter()
        .map(|x| {
            let d = detect(x, ewma, cfg.spc.n_baseline, cfg.spc.two_sided)?;
            Ok((d.params, d.change_point.unwrap_or(d.baseline_len)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rules = Vec::with_capacity(4);
    for id in 1..=4u8 {
        let rule = WerRule::new(id, cfg.spc.direction)?;
        let (mut abs_sum, mut sq_sum, mut missed) = (0u64, 0u128, 0usize);
        for (x, (p, start)) in series.iter().zip(&starts) {
            let failure = x.len() - 1;
            let err = match evaluate_wer(rule, x, p.mu0, p.sigma, *start) {
                Some(i) => failure - i,
                None => {
                    missed += 1;
                    failure.saturating_sub(*start)
                }
            } as u64;
            abs_sum += err;
            sq_sum += u128::from(err * err);
        }
        let n = series.len() as f64;
        rules.push(RuleErrors {
            rule: id,
            mae: abs_sum as f64 / n,
            mse: sq_sum as f64 / n,
            non_triggering: missed,
        });
    }
    let best = rules
        .iter()
        .min_by(|a, b| a.mae.total_cmp(&b.mae).then(a.mse.total_cmp(&b.mse)).then(b.rule.cmp(&a.rule)))
        .expect("four rules");
    Ok(WerSelection {
        selected: WerRule::new(best.rule, cfg.spc.direction)?,
        rules,
    })
}

pub fn train_pipeline(raw: Dataset, cfg: &PipelineConfig) -> Result<TrainedArtifacts> {
    cfg.validate()?;
    let ds = preprocess_training(raw, cfg.constant_tolerance).stage("preprocessing")?;
    let (retained, hierarchies) = build_hierarchies(&ds, cfg).stage("hierarchy")?;
    info!("{} attributes in the hierarchy set", retained.len());

    let rows: Vec<Vec<f64>> = ds.simulations.iter().flat_map(|s| s.rows(&retained)).collect();
    let outcome = run_aoi(&rows, &hierarchies, cfg.aoi).stage("aoi")?;
    let residual_rows = outcome.residual.as_ref().map_or(0, |r| r.members.len());
    info!(
        "knowledge base: {} clusters in {} groups, {} residual rows",
        outcome.kb.num_clusters(),
        outcome.kb.groups.len(),
        residual_rows
    );

    let quantifier = Quantifier::new(&outcome.kb, &hierarchies);
    let series: Vec<Vec<f64>> = ds
        .simulations
        .par_iter()
        .map(|s| quantifier.quantify(s.unit, &s.rows(&retained)).map(|q| q.weights()))
        .collect::<Result<_>>()
        .stage("quantification")?;

    let (mu0, sigma) = pooled_baseline(&series, cfg.spc.n_baseline).stage("baseline")?;
    let ewma = EwmaParams::new(cfg.spc.lambda, cfg.spc.l, 1, mu0, sigma).stage("baseline")?;

    let (model, report) = train(&series, &cfg.lstm_config()).stage("forecaster")?;
    info!("forecaster holdout RMSE {:.6}", report.holdout_rmse);

    let selection = select_wer(&series, ewma, cfg).stage("rule selection")?;
    info!("run rules:\n{}", selection.table());

    let summary = TrainSummary {
        training_units: ds.simulations.len(),
        training_rows: rows.len(),
        clusters: outcome.kb.num_clusters(),
        relation_groups: outcome.kb.groups.len(),
        residual_rows,
        forced_extractions: outcome.forced_extractions,
        holdout_rmse: report.holdout_rmse,
        final_train_loss: report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        train_windows: report.train_windows,
        holdout_windows: report.holdout_windows,
    };
    Ok(TrainedArtifacts {
        config: cfg.clone(),
        retained,
        hierarchies,
        kb: outcome.kb,
        ewma,
        model,
        rule: selection.selected,
        selection,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulReport {
    pub unit: u32,
    /// Cycles observed.
    pub length: usize,
    pub change_point: Option<usize>,
    /// Run rule already fulfilled on the observed series.
    pub anomaly_at_real: Option<usize>,
    /// Index (in the extended series) where the rule fired on the forecast.
    pub anomaly_at_forecast: Option<usize>,
    /// The forecast hit the horizon cap without the rule firing.
    pub forecast_capped: bool,
    /// The series was shorter than the baseline window.
    pub baseline_fallback: bool,
    /// Cycles from the last observed cycle to the anomaly.
    pub predicted_rul: Option<u32>,
    pub true_rul: Option<u32>,
    pub abs_error: Option<u32>,
}

/// RUL estimate from a quantification series observed up to its last cycle.
pub fn estimate_rul_series(unit: u32, x: &[f64], art: &TrainedArtifacts) -> Result<RulReport> {
    let cfg = &art.config;
    let det = detect(x, art.ewma, cfg.spc.n_baseline, cfg.spc.two_sided)?;
    let mut report = RulReport {
        unit,
        length: x.len(),
        change_point: det.change_point,
        anomaly_at_real: None,
        anomaly_at_forecast: None,
        forecast_capped: false,
        baseline_fallback: det.fallback,
        predicted_rul: None,
        true_rul: None,
        abs_error: None,
    };
    let Some(cp) = det.change_point else {
        return Ok(report);
    };
    let (mu0, sigma) = (det.params.mu0, det.params.sigma);
    if let Some(i) = evaluate_wer(art.rule, x, mu0, sigma, cp) {
        report.anomaly_at_real = Some(i);
        report.predicted_rul = Some(0);
        return Ok(report);
    }
    let f = forecast(&art.model, x, |ext| evaluate_wer(art.rule, ext, mu0, sigma, cp).is_some(), cfg.forecast_cap)?;
    report.forecast_capped = f.capped;
    if !f.capped {
        report.anomaly_at_forecast = Some(x.len() - 1 + f.values.len());
    }
    report.predicted_rul = Some(f.values.len() as u32);
    Ok(report)
}

pub fn estimate_rul(sim: &Simulation, art: &TrainedArtifacts) -> Result<RulReport> {
    let q = art.quantify(sim).stage("quantification")?;
    estimate_rul_series(sim.unit, &q.weights(), art).stage("rul")
}

fn with_truth(mut r: RulReport, truth: u32) -> RulReport {
    r.true_rul = Some(truth);
    r.abs_error = r.predicted_rul.map(|p| p.abs_diff(truth));
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub reference: RulReference,
    pub simulations: usize,
    pub detected: usize,
    /// Change point strictly before the failure cycle.
    pub early_detection_rate: f64,
    pub evaluated: usize,
    pub mae: f64,
    pub mse: f64,
    pub filter_cycle: usize,
    pub filtered: usize,
    pub filtered_mae: f64,
    pub capped_forecasts: usize,
    pub rule: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub reports: Vec<RulReport>,
    pub summary: EvaluationSummary,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Scores estimates against known RULs.
///
/// With [`RulReference::TruthFile`] `sims` are truncated test units and
/// `truth` their remaining cycles. With [`RulReference::TrainingEndpoints`]
/// `sims` run to failure, `truth` is ignored, and each unit is cut at its
/// change point so the estimate is compared with the cycles actually left.
pub fn evaluate(sims: &[Simulation], truth: &[u32], art: &TrainedArtifacts) -> Result<Evaluation> {
    let cfg = &art.config;
    let reference = cfg.rul_reference;
    if reference == RulReference::TruthFile && truth.len() != sims.len() {
        return Err(Error::Alignment {
            expected: sims.len(),
            found: truth.len(),
        });
    }
    let series = art.quantify_all(sims).stage("quantification")?;
    let reports = series
        .par_iter()
        .enumerate()
        .map(|(k, q)| {
            let x = q.weights();
            match reference {
                RulReference::TruthFile => Ok(with_truth(estimate_rul_series(q.sim_id, &x, art)?, truth[k])),
                RulReference::TrainingEndpoints => {
                    let det = detect(&x, art.ewma, cfg.spc.n_baseline, cfg.spc.two_sided)?;
                    match det.change_point {
                        Some(cp) => {
                            let mut r = estimate_rul_series(q.sim_id, &x[..=cp], art)?;
                            r.length = x.len();
                            Ok(with_truth(r, (x.len() - 1 - cp) as u32))
                        }
                        None => estimate_rul_series(q.sim_id, &x, art),
                    }
                }
            }
        })
        .collect::<Result<Vec<_>>>()
        .stage("rul")?;

    let failure = |r: &RulReport| match reference {
        RulReference::TruthFile => r.length + r.true_rul.unwrap_or(0) as usize - 1,
        RulReference::TrainingEndpoints => r.length - 1,
    };
    let detected = reports.iter().filter(|r| r.change_point.is_some()).count();
    let early = reports.iter().filter(|r| r.change_point.is_some_and(|cp| cp < failure(r))).count();
    let errs: Vec<(usize, f64)> = reports
        .iter()
        .filter_map(|r| Some((r.change_point?, f64::from(r.abs_error?))))
        .collect();
    let filtered: Vec<f64> = errs.iter().filter(|(cp, _)| cp + 1 > cfg.filter_cycle).map(|e| e.1).collect();
    let summary = EvaluationSummary {
        reference,
        simulations: reports.len(),
        detected,
        early_detection_rate: early as f64 / reports.len().max(1) as f64,
        evaluated: errs.len(),
        mae: mean(errs.iter().map(|e| e.1)),
        mse: mean(errs.iter().map(|e| e.1 * e.1)),
        filter_cycle: cfg.filter_cycle,
        filtered: filtered.len(),
        filtered_mae: mean(filtered.into_iter()),
        capped_forecasts: reports.iter().filter(|r| r.forecast_capped).count(),
        rule: art.rule.id,
    };
    Ok(Evaluation { reports, summary })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NONE".to_string(), |v| v.to_string())
}

impl Evaluation {
    /// Per-unit columns (cycles are 1-based) followed by a `#`-prefixed
    /// summary block.
    pub fn report(&self) -> String {
        let mut s = String::from(
            "unit\tlength\tchange_cycle\tanomaly_real_cycle\tanomaly_forecast_cycle\tcapped\tpredicted_rul\ttrue_rul\tabs_error\n",
        );
        for r in &self.reports {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.unit,
                r.length,
                opt(r.change_point.map(|i| i + 1)),
                opt(r.anomaly_at_real.map(|i| i + 1)),
                opt(r.anomaly_at_forecast.map(|i| i + 1)),
                r.forecast_capped,
                opt(r.predicted_rul),
                opt(r.true_rul),
                opt(r.abs_error)
            );
        }
        let m = &self.summary;
        let _ = writeln!(s, "# rule WER{}", m.rule);
        let _ = writeln!(s, "# simulations {} detected {} evaluated {}", m.simulations, m.detected, m.evaluated);
        let _ = writeln!(s, "# early_detection_rate {}", m.early_detection_rate);
        let _ = writeln!(s, "# mae {} mse {}", m.mae, m.mse);
        let _ = writeln!(s, "# filtered_mae {} (change cycle > {}, n = {})", m.filtered_mae, m.filter_cycle, m.filtered);
        let _ = writeln!(s, "# capped_forecasts {}", m.capped_forecasts);
        s
    }
}

/// `cycle\tvalue\tz\tucl\tlcl\tcentre` for one quantification series.
pub fn ewma_chart(x: &[f64], art: &TrainedArtifacts) -> Result<String> {
    let (params, _, _) = chart_for(x, art.ewma, art.config.spc.n_baseline)?;
    let z = ewma_transform(x, params).z;
    let mut s = String::from("cycle\tvalue\tz\tucl\tlcl\tcentre\n");
    for (k, (v, zk)) in x.iter().zip(&z).enumerate() {
        let (lcl, ucl) = control_limits(&params, k + 1);
        let _ = writeln!(s, "{}\t{v}\t{zk}\t{ucl}\t{lcl}\t{}", k + 1, params.mu0);
    }
    Ok(s)
}
