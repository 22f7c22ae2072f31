//! Python bindings: formulas, hierarchies, knowledge bases, the LSTM
//! forecaster and the trained pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use aoipdm::aoi::{self, AoiParams};
use aoipdm::config::{PipelineConfig, RulReference};
use aoipdm::dataio::{load_cmapss, load_rul_truth};
use aoipdm::hierarchy::{parse_hierarchy_config, HierarchySet, Label, RangePolicy};
use aoipdm::kb::{descriptor_string, KnowledgeBase};
use aoipdm::lstm::{self, LstmModel};
use aoipdm::pipeline::{self, RulReport, TrainedArtifacts};
use aoipdm::quantify::Quantifier;
use aoipdm::spc::{self, Direction, EwmaParams, WerRule};
use aoipdm::synth::{write_files, SynthConfig};
use aoipdm::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for aoipdm::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn policy(strict: bool) -> RangePolicy {
    if strict {
        RangePolicy::Strict
    } else {
        RangePolicy::Clamp
    }
}

fn direction(s: &str) -> PyResult<Direction> {
    match s {
        "above" => Ok(Direction::Above),
        "below" => Ok(Direction::Below),
        "both" => Ok(Direction::Both),
        _ => Err(PyValueError::new_err(format!("direction `{s}` is not above, below or both"))),
    }
}

fn config_from(text: Option<&str>) -> PyResult<PipelineConfig> {
    text.map_or_else(|| Ok(PipelineConfig::default()), |t| PipelineConfig::from_toml(t).py())
}

/// Average of `2**-level` over the given attribute levels.
#[pyfunction]
fn generalized_level_weight(levels: Vec<usize>) -> PyResult<f64> {
    aoi::generalized_level_weight(&levels).py()
}

#[pyfunction]
fn cluster_weight(level_weight: f64, instances: u64, outliers: u64, diffw: f64) -> PyResult<f64> {
    aoi::cluster_weight(level_weight, instances, outliers, diffw).py()
}

#[pyfunction]
#[pyo3(signature = (x, mu0, sigma, lam = 0.2, l = 3.0, n = 1))]
fn ewma(x: Vec<f64>, mu0: f64, sigma: f64, lam: f64, l: f64, n: usize) -> PyResult<Vec<f64>> {
    let p = EwmaParams::new(lam, l, n, mu0, sigma).py()?;
    Ok(spc::ewma_transform(&x, p).z)
}

/// `(lcl, ucl)` at 1-based sample `i`.
#[pyfunction]
#[pyo3(signature = (i, mu0, sigma, lam = 0.2, l = 3.0, n = 1))]
fn control_limits(i: usize, mu0: f64, sigma: f64, lam: f64, l: f64, n: usize) -> PyResult<(f64, f64)> {
    let p = EwmaParams::new(lam, l, n, mu0, sigma).py()?;
    Ok(spc::control_limits(&p, i))
}

#[pyfunction]
#[pyo3(signature = (x, mu0, sigma, baseline_len = 0, lam = 0.2, l = 3.0, n = 1, two_sided = false))]
#[allow(clippy::too_many_arguments)]
fn detect_change_point(
    x: Vec<f64>,
    mu0: f64,
    sigma: f64,
    baseline_len: usize,
    lam: f64,
    l: f64,
    n: usize,
    two_sided: bool,
) -> PyResult<Option<usize>> {
    let p = EwmaParams::new(lam, l, n, mu0, sigma).py()?;
    Ok(spc::detect_change_point(&spc::ewma_transform(&x, p), baseline_len, two_sided))
}

/// Index where run rule `rule` (1-4) is first completed at or after `start`.
#[pyfunction]
#[pyo3(signature = (rule, x, mu0, sigma, start = 0, direction = "above"))]
fn evaluate_wer(rule: u8, x: Vec<f64>, mu0: f64, sigma: f64, start: usize, direction: &str) -> PyResult<Option<usize>> {
    let r = WerRule::new(rule, self::direction(direction)?).py()?;
    Ok(spc::evaluate_wer(r, &x, mu0, sigma, start))
}

/// Writes a synthetic run-to-failure dataset and returns the file paths.
#[pyfunction]
#[pyo3(signature = (dir, subset = "SYN001", train_units = 100, test_units = 100, seed = 2020))]
fn synth(dir: PathBuf, subset: &str, train_units: usize, test_units: usize, seed: u64) -> PyResult<Vec<PathBuf>> {
    let cfg = SynthConfig {
        seed,
        train_units,
        test_units,
        ..SynthConfig::default()
    };
    write_files(&cfg, &dir, subset).py()
}

/// The default pipeline configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    PipelineConfig::default().to_toml()
}

#[pyclass(name = "Hierarchies", module = "aoipdm", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHierarchies(HierarchySet);

#[pymethods]
impl PyHierarchies {
    #[staticmethod]
    #[pyo3(signature = (names, columns, num_levels = 4, base_bins = 10, strict = false))]
    fn from_percentiles(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        num_levels: usize,
        base_bins: usize,
        strict: bool,
    ) -> PyResult<Self> {
        if names.len() != columns.len() {
            return Err(PyValueError::new_err("one name per column"));
        }
        HierarchySet::from_percentiles(&names, &columns, num_levels, base_bins, policy(strict))
            .py()
            .map(Self)
    }

    #[staticmethod]
    #[pyo3(signature = (text, strict = false))]
    fn parse(text: &str, strict: bool) -> PyResult<Self> {
        HierarchySet::new(parse_hierarchy_config(text).py()?, policy(strict)).py().map(Self)
    }

    fn to_config(&self) -> String {
        self.0.to_config()
    }

    fn checksum(&self) -> String {
        self.0.checksum()
    }

    fn names(&self) -> Vec<String> {
        self.0.hierarchies.iter().map(|h| h.schema.name.clone()).collect()
    }

    /// Label of `value` of attribute `attr` at `level`.
    fn generalize(&self, attr: usize, value: f64, level: usize) -> PyResult<String> {
        if attr >= self.0.len() || level > self.0.get(attr).max_level() {
            return Err(PyValueError::new_err(format!("no level {level} for attribute {attr}")));
        }
        let h = self.0.get(attr);
        let label = h.generalize_raw(value, level, self.0.policy).py()?;
        Ok(h.label_name(level, label))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "KnowledgeBase", module = "aoipdm", frozen)]
struct PyKnowledgeBase {
    kb: KnowledgeBase,
    hs: HierarchySet,
    #[pyo3(get)]
    residual: usize,
}

#[pymethods]
impl PyKnowledgeBase {
    /// Runs attribute oriented induction over `rows`.
    #[staticmethod]
    #[pyo3(signature = (rows, hierarchies, min_cluster_size = 10, attr_threshold = 20, tuple_threshold = 200))]
    fn induce(
        rows: Vec<Vec<f64>>,
        hierarchies: &PyHierarchies,
        min_cluster_size: usize,
        attr_threshold: usize,
        tuple_threshold: usize,
    ) -> PyResult<Self> {
        let params = AoiParams {
            min_cluster_size,
            attr_threshold,
            tuple_threshold,
        };
        let out = aoi::run_aoi(&rows, &hierarchies.0, params).py()?;
        Ok(Self {
            kb: out.kb,
            hs: hierarchies.0.clone(),
            residual: out.residual.map_or(0, |r| r.members.len()),
        })
    }

    #[staticmethod]
    fn read(text: &str, hierarchies: &PyHierarchies) -> PyResult<Self> {
        Ok(Self {
            kb: KnowledgeBase::read(text, &hierarchies.0).py()?,
            hs: hierarchies.0.clone(),
            residual: 0,
        })
    }

    fn write(&self) -> String {
        self.kb.write(&self.hs)
    }

    #[getter]
    fn num_clusters(&self) -> usize {
        self.kb.num_clusters()
    }

    /// One dict per cluster, in matching order.
    fn clusters<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mut out = Vec::new();
        for g in &self.kb.groups {
            let active: Vec<(usize, usize)> = g
                .descriptor
                .iter()
                .enumerate()
                .filter_map(|(a, l)| match l {
                    aoipdm::kb::AttrLevel::Level(k) => Some((a, *k)),
                    aoipdm::kb::AttrLevel::Removed => None,
                })
                .collect();
            for c in &g.clusters {
                let d = PyDict::new(py);
                d.set_item("descriptor", descriptor_string(&g.descriptor))?;
                let labels: Vec<String> = active
                    .iter()
                    .zip(&c.signature)
                    .map(|(&(a, k), &l): (&(usize, usize), &Label)| self.hs.get(a).label_name(k, l))
                    .collect();
                d.set_item("signature", labels)?;
                d.set_item("instances", c.instances)?;
                d.set_item("min_size", c.min_size)?;
                d.set_item("level_weight", c.level_weight)?;
                d.set_item("weight", c.weight)?;
                out.push(d);
            }
        }
        Ok(out)
    }

    /// `(cluster index or None, weight)` for one raw instance.
    fn match_instance(&self, instance: Vec<f64>) -> PyResult<(Option<usize>, f64)> {
        let m = Quantifier::new(&self.kb, &self.hs).match_instance(&instance).py()?;
        Ok((m.cluster, m.weight))
    }

    /// Matched weights of consecutive rows.
    fn quantify(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(Quantifier::new(&self.kb, &self.hs).quantify(0, &rows).py()?.weights())
    }
}

#[pyclass(name = "LstmModel", module = "aoipdm", skip_from_py_object)]
#[derive(Clone)]
struct PyLstm(LstmModel);

#[pymethods]
impl PyLstm {
    #[new]
    #[pyo3(signature = (hidden, window, seed = 7))]
    fn new(hidden: usize, window: usize, seed: u64) -> PyResult<Self> {
        if hidden == 0 || window == 0 {
            return Err(PyValueError::new_err("hidden and window must be positive"));
        }
        Ok(Self(LstmModel::new(hidden, window, seed)))
    }

    /// Trains on the given series with the `[lstm]` section of a pipeline
    /// configuration; returns the model and its holdout RMSE.
    #[staticmethod]
    #[pyo3(signature = (series, config = None, seed = 7))]
    fn train(series: Vec<Vec<f64>>, config: Option<&str>, seed: u64) -> PyResult<(Self, f64)> {
        let mut cfg = config_from(config)?;
        cfg.seed = seed;
        let (m, report) = lstm::train(&series, &cfg.lstm_config()).py()?;
        Ok((Self(m), report.holdout_rmse))
    }

    #[staticmethod]
    fn read(text: &str) -> PyResult<Self> {
        Ok(Self(LstmModel::read(text).py()?.0))
    }

    fn write(&self) -> String {
        self.0.write(&lstm::TrainConfig {
            hidden: self.0.hidden,
            window: self.0.window,
            seed: self.0.seed,
            ..lstm::TrainConfig::default()
        })
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.0.hidden
    }

    #[getter]
    fn window(&self) -> usize {
        self.0.window
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.0.params.clone()
    }

    #[setter]
    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        if params.len() != self.0.params.len() {
            return Err(PyValueError::new_err(format!("expected {} parameters", self.0.params.len())));
        }
        self.0.params = params;
        Ok(())
    }

    fn forward(&self, window: Vec<f64>) -> PyResult<f64> {
        if window.len() != self.0.window {
            return Err(PyValueError::new_err(format!("window must have {} values", self.0.window)));
        }
        Ok(self.0.forward(&window))
    }

    /// `steps` closed-loop predictions following `history`.
    fn forecast(&self, history: Vec<f64>, steps: usize) -> PyResult<Vec<f64>> {
        Ok(lstm::forecast(&self.0, &history, |_| false, steps).py()?.values)
    }

    /// Mean squared error and its gradient over `(window, target)` pairs.
    fn loss_and_grad(&self, batch: Vec<(Vec<f64>, f64)>) -> PyResult<(f64, Vec<f64>)> {
        if batch.is_empty() || batch.iter().any(|(w, _)| w.len() != self.0.window) {
            return Err(PyValueError::new_err(format!("need windows of {} values", self.0.window)));
        }
        Ok(self.0.loss_and_grad(&batch))
    }
}

fn report_dict<'py>(py: Python<'py>, r: &RulReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("unit", r.unit)?;
    d.set_item("length", r.length)?;
    d.set_item("change_point", r.change_point)?;
    d.set_item("anomaly_at_real", r.anomaly_at_real)?;
    d.set_item("anomaly_at_forecast", r.anomaly_at_forecast)?;
    d.set_item("forecast_capped", r.forecast_capped)?;
    d.set_item("baseline_fallback", r.baseline_fallback)?;
    d.set_item("predicted_rul", r.predicted_rul)?;
    d.set_item("true_rul", r.true_rul)?;
    d.set_item("abs_error", r.abs_error)?;
    Ok(d)
}

/// Trained knowledge base, chart defaults, forecaster and run rule.
#[pyclass(name = "Pipeline", module = "aoipdm", frozen)]
struct PyPipeline(TrainedArtifacts);

impl PyPipeline {
    fn dataset(&self, path: &Path) -> PyResult<aoipdm::dataio::Dataset> {
        Ok(self.0.restrict(load_cmapss(path).py()?))
    }
}

#[pymethods]
impl PyPipeline {
    /// Trains on a C-MAPSS style training file. `config` is TOML text.
    #[staticmethod]
    #[pyo3(signature = (train_path, config = None, seed = None))]
    fn train(py: Python<'_>, train_path: PathBuf, config: Option<&str>, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = config_from(config)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let ds = load_cmapss(&train_path).py()?;
        py.detach(|| pipeline::train_pipeline(ds, &cfg)).py().map(Self)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        TrainedArtifacts::load(&dir).py().map(Self)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).py()
    }

    #[getter]
    fn rule(&self) -> u8 {
        self.0.rule.id
    }

    #[getter]
    fn holdout_rmse(&self) -> f64 {
        self.0.summary.holdout_rmse
    }

    #[getter]
    fn attributes(&self) -> Vec<String> {
        self.0.hierarchies.hierarchies.iter().map(|h| h.schema.name.clone()).collect()
    }

    #[getter]
    fn config(&self) -> String {
        self.0.config.to_toml()
    }

    #[getter]
    fn hierarchies(&self) -> PyHierarchies {
        PyHierarchies(self.0.hierarchies.clone())
    }

    #[getter]
    fn knowledge_base(&self) -> PyKnowledgeBase {
        PyKnowledgeBase {
            kb: self.0.kb.clone(),
            hs: self.0.hierarchies.clone(),
            residual: self.0.summary.residual_rows,
        }
    }

    #[getter]
    fn model(&self) -> PyLstm {
        PyLstm(self.0.model.clone())
    }

    /// Per-rule error table from rule selection.
    fn selection_table(&self) -> String {
        self.0.selection.table()
    }

    /// Quantification series per unit of a data file.
    fn quantify(&self, path: PathBuf) -> PyResult<BTreeMap<u32, Vec<f64>>> {
        let ds = self.dataset(&path)?;
        let series = self.0.quantify_all(&ds.simulations).py()?;
        Ok(series.into_iter().map(|q| (q.sim_id, q.weights())).collect())
    }

    /// RUL estimate per unit of a (truncated) data file.
    fn estimate_rul<'py>(&self, py: Python<'py>, path: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let ds = self.dataset(&path)?;
        let reports = ds
            .simulations
            .iter()
            .map(|s| pipeline::estimate_rul(s, &self.0))
            .collect::<aoipdm::Result<Vec<_>>>()
            .py()?;
        reports.iter().map(|r| report_dict(py, r)).collect()
    }

    /// Scores the test file against the truth file (or, when configured for
    /// training endpoints, scores `path` alone). Returns the summary and the
    /// per-unit reports.
    #[pyo3(signature = (path, rul_path = None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        path: PathBuf,
        rul_path: Option<PathBuf>,
    ) -> PyResult<(Bound<'py, PyDict>, Vec<Bound<'py, PyDict>>)> {
        let ds = self.dataset(&path)?;
        let truth = match (self.0.config.rul_reference, rul_path) {
            (RulReference::TruthFile, Some(p)) => load_rul_truth(p, ds.simulations.len()).py()?,
            (RulReference::TruthFile, None) => return Err(PyValueError::new_err("rul_path is required")),
            (RulReference::TrainingEndpoints, _) => Vec::new(),
        };
        let ev = pipeline::evaluate(&ds.simulations, &truth, &self.0).py()?;
        let s = &ev.summary;
        let d = PyDict::new(py);
        d.set_item("simulations", s.simulations)?;
        d.set_item("detected", s.detected)?;
        d.set_item("early_detection_rate", s.early_detection_rate)?;
        d.set_item("evaluated", s.evaluated)?;
        d.set_item("mae", s.mae)?;
        d.set_item("mse", s.mse)?;
        d.set_item("filter_cycle", s.filter_cycle)?;
        d.set_item("filtered", s.filtered)?;
        d.set_item("filtered_mae", s.filtered_mae)?;
        d.set_item("capped_forecasts", s.capped_forecasts)?;
        d.set_item("rule", s.rule)?;
        let reports = ev.reports.iter().map(|r| report_dict(py, r)).collect::<PyResult<_>>()?;
        Ok((d, reports))
    }
}

#[pymodule]
#[pyo3(name = "aoipdm")]
fn aoipdm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generalized_level_weight, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_weight, m)?)?;
    m.add_function(wrap_pyfunction!(ewma, m)?)?;
    m.add_function(wrap_pyfunction!(control_limits, m)?)?;
    m.add_function(wrap_pyfunction!(detect_change_point, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_wer, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_class::<PyHierarchies>()?;
    m.add_class::<PyKnowledgeBase>()?;
    m.add_class::<PyLstm>()?;
    m.add_class::<PyPipeline>()?;
    Ok(())
}
