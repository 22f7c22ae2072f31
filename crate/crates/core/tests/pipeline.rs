use std::fs;
use std::path::Path;

use aoipdm::config::{PipelineConfig, RulReference};
use aoipdm::dataio::{parse_cmapss, parse_rul_truth, Dataset};
use aoipdm::lstm::LstmModel;
use aoipdm::pipeline::{estimate_rul, estimate_rul_series, evaluate, train_pipeline, TrainedArtifacts};
use aoipdm::spc::WerRule;
use aoipdm::synth::{generate, SynthConfig, SynthData};

fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.lstm.hidden = 4;
    cfg.lstm.window = 10;
    cfg.lstm.epochs = 3;
    cfg.lstm.windows_per_epoch = 64;
    cfg
}

fn data(train_units: usize, test_units: usize) -> SynthData {
    generate(&SynthConfig {
        train_units,
        test_units,
        ..SynthConfig::default()
    })
}

fn train_set(d: &SynthData) -> Dataset {
    parse_cmapss(&d.train, Path::new("train.txt")).unwrap()
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn two_simulation_smoke_run() {
    let d = data(2, 2);
    let art = train_pipeline(train_set(&d), &tiny_config()).unwrap();
    assert!(art.kb.num_clusters() > 0);
    assert!(art.summary.holdout_rmse.is_finite());
    assert!((1..=4).contains(&art.rule.id));
    assert_eq!(art.summary.training_units, 2);
    assert_eq!(art.selection.rules.len(), 4);
}

#[test]
fn reruns_write_identical_artifacts_and_reload() {
    let d = data(4, 3);
    let cfg = tiny_config();
    let a = train_pipeline(train_set(&d), &cfg).unwrap();
    let b = train_pipeline(train_set(&d), &cfg).unwrap();
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.save(da.path()).unwrap();
    b.save(db.path()).unwrap();
    let files = read_dir(da.path());
    assert_eq!(files.len(), 4);
    assert_eq!(files, read_dir(db.path()));

    let back = TrainedArtifacts::load(da.path()).unwrap();
    assert_eq!(back.kb, a.kb);
    assert_eq!(back.model, a.model);
    assert_eq!(back.hierarchies, a.hierarchies);
    assert_eq!(back.config, a.config);
    assert_eq!(back.rule, a.rule);
    assert_eq!(back.ewma, a.ewma);

    let test = back.restrict(parse_cmapss(&d.test, Path::new("test.txt")).unwrap());
    let truth = parse_rul_truth(&d.rul, Path::new("rul.txt"), 3).unwrap();
    let ev = evaluate(&test.simulations, &truth, &back).unwrap();
    // summaries may hold NaN means, so compare the rendered reports
    assert_eq!(ev.report(), evaluate(&test.simulations, &truth, &a).unwrap().report());
    assert_eq!(ev.reports.len(), 3);
    for r in &ev.reports {
        if let (Some(cp), Some(at)) = (r.change_point, r.anomaly_at_forecast) {
            assert!(cp < at);
        }
        assert!(r.true_rul.is_some());
    }
    let s = &ev.summary;
    assert!((0.0..=1.0).contains(&s.early_detection_rate));
    assert!(s.detected <= s.simulations && s.evaluated <= s.detected);
    assert!(ev.report().contains("# mae"));
}

#[test]
fn training_endpoints_reference() {
    let d = data(3, 1);
    let mut cfg = tiny_config();
    cfg.rul_reference = RulReference::TrainingEndpoints;
    let art = train_pipeline(train_set(&d), &cfg).unwrap();
    let train = art.restrict(train_set(&d));
    let ev = evaluate(&train.simulations, &[], &art).unwrap();
    for r in ev.reports.iter().filter(|r| r.change_point.is_some()) {
        let cp = r.change_point.unwrap();
        // each unit is cut at its change point; the rest of its life is the truth
        let full = train.simulations.iter().find(|s| s.unit == r.unit).unwrap().len();
        assert_eq!(r.length, full);
        assert_eq!(r.true_rul, Some((full - 1 - cp) as u32));
    }
}

/// Artifacts whose forecaster always predicts `level`, with the given rule.
fn constant_forecaster(level: f64, rule: u8) -> TrainedArtifacts {
    let d = data(2, 1);
    let mut art = train_pipeline(train_set(&d), &tiny_config()).unwrap();
    let mut m = LstmModel::zeros(2, 5);
    let hb = m.layout().head_bias();
    m.params[hb] = level;
    art.model = m;
    art.rule = WerRule::upper(rule);
    art
}

fn step_series(baseline: usize, raised: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..baseline).map(|i| if i % 2 == 0 { 0.149 } else { 0.151 }).collect();
    x.extend(std::iter::repeat_n(0.2, raised));
    x
}

#[test]
fn flat_series_has_no_change_point() {
    let art = constant_forecaster(1.0, 4);
    let r = estimate_rul_series(1, &step_series(150, 0), &art).unwrap();
    assert_eq!((r.change_point, r.predicted_rul), (None, None));
}

#[test]
fn rule_already_met_gives_zero() {
    let art = constant_forecaster(1.0, 1);
    let r = estimate_rul_series(1, &step_series(100, 3), &art).unwrap();
    assert_eq!(r.change_point, Some(100));
    assert_eq!(r.anomaly_at_real, Some(100));
    assert_eq!(r.predicted_rul, Some(0));
}

#[test]
fn rising_forecast_completes_rule_four() {
    // three raised points after the change at index 100; rule 4 needs eight
    // in a row, so five forecast steps above the centre line finish it
    let art = constant_forecaster(1.0, 4);
    let r = estimate_rul_series(1, &step_series(100, 3), &art).unwrap();
    assert_eq!(r.change_point, Some(100));
    assert_eq!(r.anomaly_at_real, None);
    assert_eq!(r.anomaly_at_forecast, Some(107));
    assert_eq!(r.predicted_rul, Some(5));
    assert!(!r.forecast_capped);

    // a forecaster stuck below the centre line never completes it
    let art = constant_forecaster(0.0, 4);
    let r = estimate_rul_series(1, &step_series(100, 3), &art).unwrap();
    assert!(r.forecast_capped);
    assert_eq!(r.predicted_rul, Some(art.config.forecast_cap as u32));
}

#[test]
fn estimate_rul_matches_series_path() {
    let d = data(2, 2);
    let art = train_pipeline(train_set(&d), &tiny_config()).unwrap();
    let test = art.restrict(parse_cmapss(&d.test, Path::new("test.txt")).unwrap());
    for sim in &test.simulations {
        let q = art.quantify(sim).unwrap();
        assert_eq!(estimate_rul(sim, &art).unwrap(), estimate_rul_series(sim.unit, &q.weights(), &art).unwrap());
    }
}
