//! Argument parsing and dispatch. Every value flag is optional: a JSON
//! config file supplies the base values and flags override it.

use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use xtrader_core::Result;

use crate::config::{ModelKind, RunConfig};
use crate::run::{cmd_backtest, cmd_compare, cmd_synth, cmd_train, SynthSpec};

#[derive(Debug, Parser)]
#[command(
    name = "xtrader",
    version,
    about = "Train and backtest recurrent trading agents on daily bars"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic market as per-ticker CSVs plus manifest.
    Synth(SynthArgs),
    /// Train a policy; writes config echo, training log, and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split; writes report and curves.
    Backtest(BacktestArgs),
    /// Train and backtest both model kinds side by side.
    Compare(CompareArgs),
}

/// Flags shared by train/backtest/compare, mirroring [`RunConfig`].
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON run config; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest path.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Policy architecture.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Observation window in trading days.
    #[arg(long)]
    pub window: Option<usize>,
    /// Residual-block embedding width.
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub total_timesteps: Option<usize>,
    /// Minimum transitions per optimization minibatch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Truncated-BPTT length (default: the window).
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Advantage smoothing; 0 is the one-step estimate, 0.95 is standard.
    #[arg(long)]
    pub gae_lambda: Option<f64>,
    /// Optimization epochs per rollout.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Steps per rollout (default: one full episode).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Train split start date (YYYY-MM-DD).
    #[arg(long)]
    pub train_start: Option<NaiveDate>,
    /// Train split end date.
    #[arg(long)]
    pub train_end: Option<NaiveDate>,
    /// Test split start date.
    #[arg(long)]
    pub test_start: Option<NaiveDate>,
    /// Test split end date.
    #[arg(long)]
    pub test_end: Option<NaiveDate>,
    /// Keep trading on turbulent days (the penalty reward still applies).
    #[arg(long)]
    pub trade_through_turbulence: bool,
}

impl ConfigArgs {
    /// Loads the config file (or defaults) and layers the flags on top.
    pub fn to_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.manifest {
            config.manifest = v.clone();
        }
        if let Some(v) = &self.out {
            config.out = v.clone();
        }
        if let Some(v) = self.model {
            config.model = v;
        }
        if let Some(v) = self.window {
            config.window = v;
        }
        if let Some(v) = self.embedding_dim {
            config.embedding_dim = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.total_timesteps {
            config.train.total_timesteps = Some(v);
        }
        if let Some(v) = self.batch_size {
            config.train.batch_size = Some(v);
        }
        if let Some(v) = self.seq_len {
            config.train.seq_len = Some(v);
        }
        if let Some(v) = self.learning_rate {
            config.train.learning_rate = Some(v);
        }
        if let Some(v) = self.gae_lambda {
            config.train.gae_lambda = Some(v);
        }
        if let Some(v) = self.epochs {
            config.train.epochs = Some(v);
        }
        if let Some(v) = self.horizon {
            config.train.horizon = Some(v);
        }
        if let Some(v) = self.train_start {
            config.train_start = Some(v);
        }
        if let Some(v) = self.train_end {
            config.train_end = Some(v);
        }
        if let Some(v) = self.test_start {
            config.test_start = Some(v);
        }
        if let Some(v) = self.test_end {
            config.test_end = Some(v);
        }
        if self.trade_through_turbulence {
            config.env.trade_through_turbulence = true;
        }
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to evaluate (default: <out>/checkpoint.bin).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Compare across windows 30, 15, and 5 instead of just --window.
    #[arg(long)]
    pub paper_presets: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for the CSVs and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated ticker names.
    #[arg(long, value_delimiter = ',', default_value = "SYNA")]
    pub tickers: Vec<String>,
    /// Trading days to generate.
    #[arg(long, default_value_t = 250)]
    pub n_days: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// First trading day (YYYY-MM-DD).
    #[arg(long, default_value = "2009-01-02")]
    pub start: NaiveDate,
    /// Per-day log-return drift.
    #[arg(long, default_value_t = 0.0002)]
    pub drift: f64,
    /// Per-day log-return standard deviation.
    #[arg(long, default_value_t = 0.01)]
    pub volatility: f64,
    /// Fraction of days assigned to the train split.
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
}

impl SynthArgs {
    fn to_spec(&self) -> SynthSpec {
        SynthSpec {
            out: self.out.clone(),
            tickers: self.tickers.clone(),
            n_days: self.n_days,
            seed: self.seed,
            start: self.start,
            drift: self.drift,
            volatility: self.volatility,
            train_frac: self.train_frac,
        }
    }
}

/// Runs one parsed command to completion.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            cmd_synth(&args.to_spec())?;
        }
        Command::Train(args) => {
            cmd_train(args.config.to_config()?)?;
        }
        Command::Backtest(args) => {
            cmd_backtest(args.config.to_config()?, args.checkpoint)?;
        }
        Command::Compare(args) => {
            cmd_compare(args.config.to_config()?, args.paper_presets)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_defaults() {
        let cli = Cli::try_parse_from([
            "xtrader",
            "train",
            "--manifest",
            "data/manifest.json",
            "--model",
            "lstm",
            "--window",
            "15",
            "--batch-size",
            "64",
            "--seed",
            "7",
            "--total-timesteps",
            "1000",
            "--trade-through-turbulence",
        ])
        .expect("parse");
        let Command::Train(args) = cli.command else {
            panic!("expected train");
        };
        let config = args.config.to_config().expect("config");
        assert_eq!(config.manifest, PathBuf::from("data/manifest.json"));
        assert_eq!(config.model, ModelKind::Lstm);
        assert_eq!(config.window, 15);
        assert_eq!(config.train.batch_size, Some(64));
        assert_eq!(config.seed, 7);
        assert_eq!(config.train.total_timesteps, Some(1000));
        assert!(config.env.trade_through_turbulence);
        // seq_len was not given, so it will follow the window.
        assert_eq!(config.train_config().seq_len, 15);
    }

    #[test]
    fn dates_parse_as_iso() {
        let cli = Cli::try_parse_from([
            "xtrader",
            "backtest",
            "--test-start",
            "2022-01-02",
            "--test-end",
            "2023-01-01",
        ])
        .expect("parse");
        let Command::Backtest(args) = cli.command else {
            panic!("expected backtest");
        };
        let config = args.config.to_config().expect("config");
        assert_eq!(
            config.test_start,
            Some(NaiveDate::from_ymd_opt(2022, 1, 2).unwrap())
        );
        assert_eq!(
            config.test_end,
            Some(NaiveDate::from_ymd_opt(2023, 1, 1).unwrap())
        );
    }

    #[test]
    fn synth_tickers_split_on_commas() {
        let cli = Cli::try_parse_from([
            "xtrader", "synth", "--out", "data", "--tickers", "AAA,BBB,CCC",
        ])
        .expect("parse");
        let Command::Synth(args) = cli.command else {
            panic!("expected synth");
        };
        assert_eq!(args.tickers, vec!["AAA", "BBB", "CCC"]);
        assert_eq!(args.n_days, 250);
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        assert!(Cli::try_parse_from(["xtrader", "train", "--frobnicate"]).is_err());
        assert!(Cli::try_parse_from(["xtrader"]).is_err());
    }
}
