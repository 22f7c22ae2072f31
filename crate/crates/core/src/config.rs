//! Pipeline configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aoi::AoiParams;
use crate::error::{Error, Result};
use crate::lstm::TrainConfig;
use crate::spc::Direction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    /// Levels per attribute including the raw level.
    pub num_levels: usize,
    pub base_bins: usize,
    /// Reject out-of-range values instead of clamping them.
    pub strict: bool,
    /// Hand-written hierarchy file used instead of percentile bins.
    pub file: Option<PathBuf>,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            num_levels: 4,
            base_bins: 10,
            strict: false,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpcConfig {
    pub lambda: f64,
    pub l: f64,
    pub n_baseline: usize,
    pub two_sided: bool,
    /// Side(s) checked by the run rules.
    pub direction: Direction,
}

impl Default for SpcConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            l: 3.0,
            n_baseline: 100,
            two_sided: false,
            direction: Direction::Above,
        }
    }
}

/// What the predicted RUL is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RulReference {
    /// The dataset's ground-truth RUL file.
    TruthFile,
    /// Units run to failure: the true RUL at the change point is the number
    /// of cycles left until the last cycle.
    TrainingEndpoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Attributes whose training range is at most this are dropped.
    pub constant_tolerance: f64,
    /// Change points at or before this cycle are excluded from the filtered MAE.
    pub filter_cycle: usize,
    /// Maximum number of forecast steps.
    pub forecast_cap: usize,
    pub rul_reference: RulReference,
    pub hierarchy: HierarchyConfig,
    pub aoi: AoiParams,
    pub spc: SpcConfig,
    pub lstm: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            constant_tolerance: 0.0,
            filter_cycle: 40,
            forecast_cap: 500,
            rul_reference: RulReference::TruthFile,
            hierarchy: HierarchyConfig::default(),
            aoi: AoiParams::default(),
            spc: SpcConfig::default(),
            lstm: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Training config with the pipeline seed applied.
    pub fn lstm_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.lstm.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.hierarchy.num_levels < 2 || self.hierarchy.base_bins < 1 {
            return bad(format!("bad hierarchy settings {:?}", self.hierarchy));
        }
        if self.aoi.min_cluster_size < 2 || self.aoi.attr_threshold < 1 || self.aoi.tuple_threshold < 1 {
            return bad(format!("bad AOI settings {:?}", self.aoi));
        }
        if !(self.spc.lambda > 0.0 && self.spc.lambda <= 1.0) || !(self.spc.l > 0.0) || self.spc.n_baseline < 2 {
            return bad(format!("bad SPC settings {:?}", self.spc));
        }
        let l = &self.lstm;
        if l.hidden == 0 || l.window == 0 || l.batch_size == 0 || l.epochs == 0 {
            return bad(format!("bad LSTM settings {l:?}"));
        }
        if !(self.constant_tolerance >= 0.0) || self.forecast_cap == 0 {
            return bad("constant_tolerance must be >= 0 and forecast_cap > 0".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn round_trip_and_overrides() {
        let text = "seed = 3\nrul_reference = \"training-endpoints\"\n[lstm]\nepochs = 5\n[spc]\ndirection = \"both\"\n";
        let cfg = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.lstm.epochs, 5);
        assert_eq!(cfg.lstm_config().seed, 3);
        assert_eq!(cfg.spc.direction, Direction::Both);
        assert_eq!(cfg.rul_reference, RulReference::TrainingEndpoints);
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml("[spc]\nlambda = 0.0\n").is_err());
        assert!(PipelineConfig::from_toml("[aoi]\nmin_cluster_size = 1\n").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1\n").is_err());
        assert!(PipelineConfig::from_toml("[lstm]\nseed = 1\n").is_err());
    }
}
