//! Run configuration: a JSON file (or defaults) describing one training or
//! backtest run, with command-line flags layered on top.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use xtrader_core::data::DatasetManifest;
use xtrader_core::env::EnvConfig;
use xtrader_core::ppo::TrainConfig;
use xtrader_core::xlstm::BlockStackConfig;
use xtrader_core::{CoreError, Result};

/// Which recurrent cell family the actor-critic stacks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Gated-memory stack: one matrix-memory layer, one scalar-memory layer.
    Xlstm,
    /// Conventional LSTM layers in the same residual skeleton.
    Lstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Xlstm => write!(f, "xlstm"),
            ModelKind::Lstm => write!(f, "lstm"),
        }
    }
}

/// Sparse training hyperparameter overrides; unset fields fall back to
/// [`TrainConfig`] defaults, except `seq_len` which follows the window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOverrides {
    pub gamma: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub clip_range: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub seq_len: Option<usize>,
    pub epochs: Option<usize>,
    pub value_coef: Option<f64>,
    pub entropy_coef: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub total_timesteps: Option<usize>,
    /// Steps per rollout; unset collects one full episode per update.
    pub horizon: Option<usize>,
    pub normalize_advantages: Option<bool>,
}

impl TrainOverrides {
    /// Materializes a full [`TrainConfig`], defaulting `seq_len` to the
    /// observation window so the recurrent credit horizon matches it.
    pub fn resolved(&self, window: usize, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            gamma: self.gamma.unwrap_or(d.gamma),
            gae_lambda: self.gae_lambda.unwrap_or(d.gae_lambda),
            clip_range: self.clip_range.unwrap_or(d.clip_range),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seq_len: self.seq_len.unwrap_or(window),
            epochs: self.epochs.unwrap_or(d.epochs),
            value_coef: self.value_coef.unwrap_or(d.value_coef),
            entropy_coef: self.entropy_coef.unwrap_or(d.entropy_coef),
            max_grad_norm: self.max_grad_norm.unwrap_or(d.max_grad_norm),
            total_timesteps: self.total_timesteps.unwrap_or(d.total_timesteps),
            seed,
            horizon: self.horizon,
            normalize_advantages: self.normalize_advantages.unwrap_or(d.normalize_advantages),
        }
    }

    /// The dense form of a resolved config, for the run-directory echo.
    fn from_config(config: &TrainConfig) -> TrainOverrides {
        TrainOverrides {
            gamma: Some(config.gamma),
            gae_lambda: Some(config.gae_lambda),
            clip_range: Some(config.clip_range),
            learning_rate: Some(config.learning_rate),
            batch_size: Some(config.batch_size),
            seq_len: Some(config.seq_len),
            epochs: Some(config.epochs),
            value_coef: Some(config.value_coef),
            entropy_coef: Some(config.entropy_coef),
            max_grad_norm: Some(config.max_grad_norm),
            total_timesteps: Some(config.total_timesteps),
            horizon: config.horizon,
            normalize_advantages: Some(config.normalize_advantages),
        }
    }
}

/// One run, fully described: dataset, splits, model, hyperparameters, and
/// output directory. The copy echoed into the run directory has every
/// default materialized, so reloading it reproduces the run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Dataset manifest; per-ticker CSV paths inside it are relative to
    /// its own directory.
    pub manifest: PathBuf,
    /// Run directory for checkpoint, logs, and reports.
    pub out: PathBuf,
    pub model: ModelKind,
    /// Observation window in trading days.
    pub window: usize,
    /// Residual-block embedding width.
    pub embedding_dim: usize,
    pub seed: u64,
    /// Trading-halt threshold percentile, fitted on train-split turbulence.
    pub turbulence_percentile: f64,
    /// Split edges; unset fields come from the manifest.
    pub train_start: Option<NaiveDate>,
    pub train_end: Option<NaiveDate>,
    pub test_start: Option<NaiveDate>,
    pub test_end: Option<NaiveDate>,
    /// Episode parameters. A finite `turbulence_threshold` here overrides
    /// the percentile fit; the default (infinity) means "fit from data".
    pub env: EnvConfig,
    pub train: TrainOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: PathBuf::from("manifest.json"),
            out: PathBuf::from("run"),
            model: ModelKind::Xlstm,
            window: 30,
            embedding_dim: 128,
            seed: 0,
            turbulence_percentile: 99.0,
            train_start: None,
            train_end: None,
            test_start: None,
            test_end: None,
            env: EnvConfig::default(),
            train: TrainOverrides::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let file = File::open(path).map_err(|err| {
            CoreError::Data(format!("cannot open config {}: {err}", path.display()))
        })?;
        serde_json::from_reader(BufReader::new(file)).map_err(|err| CoreError::Parse {
            path: path.display().to_string(),
            line: err.line(),
            detail: err.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(CoreError::contract(
                "run_config",
                "window must be >= 1 trading day",
            ));
        }
        if self.embedding_dim == 0 {
            return Err(CoreError::contract(
                "run_config",
                "embedding_dim must be >= 1",
            ));
        }
        if !(self.turbulence_percentile > 0.0 && self.turbulence_percentile <= 100.0) {
            return Err(CoreError::contract(
                "run_config",
                format!(
                    "turbulence_percentile must be in (0, 100], got {}",
                    self.turbulence_percentile
                ),
            ));
        }
        self.env.validate()?;
        Ok(())
    }

    /// Fills unset split dates from the manifest, checks ordering, and
    /// materializes every training default. Idempotent.
    pub fn resolve(mut self, manifest: &DatasetManifest) -> Result<RunConfig> {
        self.validate()?;
        self.train_start.get_or_insert(manifest.train_start);
        self.train_end.get_or_insert(manifest.train_end);
        self.test_start.get_or_insert(manifest.test_start);
        self.test_end.get_or_insert(manifest.test_end);
        for (name, start, end) in [
            ("train", self.train_start, self.train_end),
            ("test", self.test_start, self.test_end),
        ] {
            let (start, end) = (start.expect("filled"), end.expect("filled"));
            if start > end {
                return Err(CoreError::contract(
                    "run_config",
                    format!("{name} split starts {start} after it ends {end}"),
                ));
            }
        }
        self.train = TrainOverrides::from_config(&self.train.resolved(self.window, self.seed));
        Ok(self)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.resolved(self.window, self.seed)
    }

    pub fn stack_config(&self) -> BlockStackConfig {
        let base = match self.model {
            ModelKind::Xlstm => BlockStackConfig::default(),
            ModelKind::Lstm => BlockStackConfig::lstm_baseline(),
        };
        BlockStackConfig {
            embedding_dim: self.embedding_dim,
            ..base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        serde_json::from_str(r#"{"tickers": [{"symbol": "A", "path": "a.csv"}]}"#)
            .expect("manifest defaults")
    }

    #[test]
    fn defaults_resolve_against_the_manifest_dates() {
        let resolved = RunConfig::default().resolve(&manifest()).expect("resolve");
        assert_eq!(resolved.train_start, Some(manifest().train_start));
        assert_eq!(resolved.test_end, Some(manifest().test_end));
        // Every training field is materialized in the echo form.
        assert_eq!(resolved.train.gamma, Some(0.99));
        assert_eq!(resolved.train.seq_len, Some(30));
        assert_eq!(resolved.train.total_timesteps, Some(0));
    }

    #[test]
    fn seq_len_follows_the_window_unless_set() {
        let config = RunConfig {
            window: 5,
            ..RunConfig::default()
        };
        assert_eq!(config.train_config().seq_len, 5);

        let pinned = RunConfig {
            window: 5,
            train: TrainOverrides {
                seq_len: Some(12),
                ..TrainOverrides::default()
            },
            ..RunConfig::default()
        };
        assert_eq!(pinned.train_config().seq_len, 12);
    }

    #[test]
    fn resolve_is_idempotent() {
        let once = RunConfig::default().resolve(&manifest()).expect("resolve");
        let twice = once.clone().resolve(&manifest()).expect("resolve again");
        assert_eq!(once, twice);
        assert_eq!(
            serde_json::to_string(&once).unwrap(),
            serde_json::to_string(&twice).unwrap()
        );
    }

    #[test]
    fn json_round_trip_preserves_the_resolved_config() {
        let resolved = RunConfig {
            model: ModelKind::Lstm,
            window: 15,
            seed: 9,
            ..RunConfig::default()
        }
        .resolve(&manifest())
        .expect("resolve");
        let text = serde_json::to_string_pretty(&resolved).expect("serialize");
        let back: RunConfig = serde_json::from_str(&text).expect("parse");
        assert_eq!(back, resolved);
        assert_eq!(back.train_config(), resolved.train_config());
    }

    #[test]
    fn sparse_json_uses_defaults() {
        let config: RunConfig =
            serde_json::from_str(r#"{"model": "lstm", "window": 15}"#).expect("parse");
        assert_eq!(config.model, ModelKind::Lstm);
        assert_eq!(config.window, 15);
        assert_eq!(config.embedding_dim, 128);
        assert_eq!(config.train, TrainOverrides::default());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let zero_window = RunConfig {
            window: 0,
            ..RunConfig::default()
        };
        assert!(zero_window.validate().is_err());

        let bad_percentile = RunConfig {
            turbulence_percentile: 0.0,
            ..RunConfig::default()
        };
        assert!(bad_percentile.validate().is_err());

        let inverted = RunConfig {
            train_start: Some(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()),
            train_end: Some(NaiveDate::from_ymd_opt(2019, 1, 1).unwrap()),
            ..RunConfig::default()
        };
        assert!(inverted.resolve(&manifest()).is_err());
    }

    #[test]
    fn stack_config_selects_the_cell_family() {
        use xtrader_core::xlstm::CellKind;
        let xlstm = RunConfig {
            embedding_dim: 16,
            ..RunConfig::default()
        };
        let stack = xlstm.stack_config();
        assert_eq!(stack.embedding_dim, 16);
        assert_eq!(stack.layers, vec![CellKind::MLstm, CellKind::SLstm]);

        let lstm = RunConfig {
            model: ModelKind::Lstm,
            embedding_dim: 16,
            ..RunConfig::default()
        };
        assert_eq!(lstm.stack_config().layers, vec![CellKind::Lstm, CellKind::Lstm]);
    }
}
