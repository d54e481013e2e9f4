//! Experiment configs. On disk they are flat TOML documents with one key per
//! field; a `run-manifest.json` written by the CLI is accepted too, in which
//! case its `resolved_config` object is used.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::geometry::LayerNormVariant;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MajorityConfig {
    pub seq_len: usize,
    pub n_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub d: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub total_steps: usize,
    pub n_seeds: usize,
    pub variants: Vec<LayerNormVariant>,
    pub master_seed: u64,
    pub eval_interval: usize,
    pub loss_threshold: f64,
    pub accuracy_threshold: f64,
    pub init_std: f64,
    /// Test sequences used for the mean query angle.
    pub angle_eval_size: usize,
}

impl Default for MajorityConfig {
    fn default() -> Self {
        MajorityConfig {
            seq_len: 20,
            n_classes: 5,
            train_size: 10_000,
            test_size: 2_000,
            d: 8,
            batch_size: 256,
            lr: 0.003,
            total_steps: 3_000,
            n_seeds: 5,
            variants: vec![LayerNormVariant::FULL, LayerNormVariant::SCALING_ONLY],
            master_seed: 0,
            eval_interval: 50,
            loss_threshold: 0.1,
            accuracy_threshold: 0.9,
            init_std: 0.02,
            angle_eval_size: 256,
        }
    }
}

impl MajorityConfig {
    /// Sizes used in the original full-scale runs.
    pub fn full_scale() -> Self {
        MajorityConfig {
            seq_len: 50,
            n_classes: 20,
            train_size: 80_000,
            test_size: 20_000,
            batch_size: 6_000,
            total_steps: 17_000,
            n_seeds: 10,
            lr: 0.001,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.seq_len < 1 {
            return fail("seq_len must be >= 1");
        }
        if self.n_classes < 2 {
            return fail("n_classes must be >= 2");
        }
        if self.d < 2 {
            return fail("d must be >= 2");
        }
        if self.train_size == 0 || self.test_size == 0 || self.batch_size == 0 {
            return fail("train_size, test_size and batch_size must be positive");
        }
        if self.n_seeds == 0 || self.variants.is_empty() {
            return fail("need at least one seed and one variant");
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be positive");
        }
        if !(self.lr > 0.0) || !(self.init_std > 0.0) {
            return fail("lr and init_std must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub n_values: Vec<usize>,
    pub d_values: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    /// Skip the raw-key grid.
    pub layernorm_only: bool,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            n_values: (2..=128).collect(),
            d_values: (2..=10).collect(),
            trials: 100,
            master_seed: 0,
            layernorm_only: false,
        }
    }
}

impl HeatmapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.d_values.is_empty() {
            return Err(Error::Config("n and d ranges must be non-empty".into()));
        }
        if self.n_values.contains(&0) || self.d_values.contains(&0) {
            return Err(Error::Config("n and d values must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Causal next-token model on a synthetic Markov chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub vocab: usize,
    pub seq_len: usize,
    pub d: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub total_steps: usize,
    pub variant: LayerNormVariant,
    pub master_seed: u64,
    pub init_std: f64,
    /// Sharpness of the random transition rows; larger is more predictable.
    pub concentration: f64,
    pub eval_interval: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            vocab: 16,
            seq_len: 64,
            d: 8,
            train_size: 2_000,
            test_size: 200,
            batch_size: 32,
            lr: 0.01,
            total_steps: 1_500,
            variant: LayerNormVariant::ProjectionOnly,
            master_seed: 0,
            init_std: 0.02,
            concentration: 2.0,
            eval_interval: 100,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::Config("vocab must be >= 2".into()));
        }
        if self.seq_len < 1 || self.d < 2 {
            return Err(Error::Config("seq_len must be >= 1 and d >= 2".into()));
        }
        if self.train_size == 0 || self.test_size == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "train_size, test_size and batch_size must be positive".into(),
            ));
        }
        if self.eval_interval == 0 || !(self.lr > 0.0) || !(self.init_std > 0.0) {
            return Err(Error::Config("eval_interval, lr and init_std must be positive".into()));
        }
        Ok(())
    }
}

/// Reads a config from TOML, JSON, or a run manifest's `resolved_config`.
pub fn load_config<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        column: 0,
        msg,
    };
    if path.extension().is_some_and(|e| e == "json") {
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        if let Some(inner) = value.get_mut("resolved_config") {
            value = inner.take();
        }
        serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_toml_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        fs::write(&path, "seq_len = 7\nvariants = [\"full\", \"identity\"]\nlr = 0.01\n").unwrap();
        let cfg: MajorityConfig = load_config(&path).unwrap();
        assert_eq!(cfg.seq_len, 7);
        assert_eq!(cfg.variants, vec![LayerNormVariant::FULL, LayerNormVariant::Identity]);
        assert_eq!(cfg.n_classes, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        fs::write(&path, "seq_length = 7\n").unwrap();
        assert!(matches!(load_config::<MajorityConfig>(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn manifest_resolved_config_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run-manifest.json");
        fs::write(&path, r#"{"subcommand":"heatmap","resolved_config":{"trials":3}}"#).unwrap();
        let cfg: HeatmapConfig = load_config(&path).unwrap();
        assert_eq!(cfg.trials, 3);
    }

    #[test]
    fn invalid_configs_fail_validation() {
        let cfg = MajorityConfig {
            seq_len: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(MajorityConfig::default().validate().is_ok());
        assert!(MajorityConfig::full_scale().validate().is_ok());
    }
}
