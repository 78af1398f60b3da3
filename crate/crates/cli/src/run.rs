//! Command implementations: dataset synthesis, training runs, backtests,
//! and the side-by-side model comparison.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xtrader_core::checkpoint;
use xtrader_core::data::{
    generate_bars, write_csv, AlignedPanel, DatasetManifest, SynthConfig, TickerEntry,
    TurbulenceSeries,
};
use xtrader_core::env::{write_trace, TradingEnv};
use xtrader_core::metrics::{count_trades, write_equity_csv, PerformanceReport};
use xtrader_core::policy::{Policy, PolicyConfig};
use xtrader_core::ppo::{evaluate_policy, write_update_log, Trainer};
use xtrader_core::{CoreError, Result};

use crate::config::{ModelKind, RunConfig};

/// Decorrelates weight-initialization draws from rollout sampling, which
/// both derive from the run seed.
const INIT_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// A run config bound to its loaded dataset: aligned panel, fitted
/// normalization, turbulence series, and day-index splits.
pub struct Prepared {
    /// Fully resolved config, turbulence threshold included.
    pub config: RunConfig,
    pub panel: AlignedPanel,
    pub turbulence: TurbulenceSeries,
    pub train_days: (usize, usize),
    pub test_days: (usize, usize),
}

impl Prepared {
    pub fn new(config: RunConfig) -> Result<Prepared> {
        let manifest = DatasetManifest::load(&config.manifest)?;
        manifest.validate()?;
        let base_dir = config
            .manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut config = config.resolve(&manifest)?;

        let mut panel = manifest.load_panel(&base_dir)?;
        let train_days = panel.split_indices(
            config.train_start.expect("resolved"),
            config.train_end.expect("resolved"),
        )?;
        let test_days = panel.split_indices(
            config.test_start.expect("resolved"),
            config.test_end.expect("resolved"),
        )?;
        panel.fit_normalization(train_days.0, train_days.1)?;
        let turbulence = TurbulenceSeries::from_panel(
            &panel,
            train_days.0,
            train_days.1,
            config.turbulence_percentile,
        )?;
        if !config.env.turbulence_threshold.is_finite() {
            config.env.turbulence_threshold = turbulence.threshold();
        }
        Ok(Prepared {
            config,
            panel,
            turbulence,
            train_days,
            test_days,
        })
    }

    pub fn train_env(&self) -> Result<TradingEnv<'_>> {
        TradingEnv::new(
            self.config.env.clone(),
            &self.panel,
            &self.turbulence,
            self.train_days,
            self.config.window,
        )
    }

    pub fn test_env(&self) -> Result<TradingEnv<'_>> {
        TradingEnv::new(
            self.config.env.clone(),
            &self.panel,
            &self.turbulence,
            self.test_days,
            self.config.window,
        )
    }

    /// A freshly initialized policy sized for this dataset.
    pub fn new_policy(&self) -> Result<Policy> {
        let policy_config = PolicyConfig {
            obs_dim: self.panel.observation_len(self.config.window),
            n_actions: self.panel.n_tickers(),
            stack: self.config.stack_config(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ INIT_SEED_SALT);
        Policy::new(policy_config, &mut rng)
    }

    /// Writes the materialized config into the run directory.
    pub fn write_echo(&self) -> Result<()> {
        write_json_pretty(&self.config.out.join("config.json"), &self.config)
    }
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|err| CoreError::Data(format!("serialization: {err}")))?;
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{text}")?;
    out.flush()?;
    Ok(())
}

/// Trains per the config and writes `config.json`, `train_log.jsonl`, and
/// `checkpoint.bin` into the run directory.
pub fn cmd_train(config: RunConfig) -> Result<()> {
    let prepared = Prepared::new(config)?;
    let out = prepared.config.out.clone();
    fs::create_dir_all(&out)?;
    prepared.write_echo()?;

    let policy = prepared.new_policy()?;
    let env = prepared.train_env()?;
    let mut trainer = Trainer::new(prepared.config.train_config(), env, policy)?;
    let history = trainer.train()?;
    write_update_log(&out.join("train_log.jsonl"), &history)?;
    checkpoint::save(&out.join("checkpoint.bin"), trainer.named_params())?;

    match history.last() {
        Some(last) => println!(
            "{}: {} updates over {} steps; last policy_loss {:.6}, value_loss {:.6}, mean episode return {:.4}",
            out.display(),
            history.len(),
            last.timesteps,
            last.policy_loss,
            last.value_loss,
            last.mean_episode_return,
        ),
        None => println!(
            "{}: no updates (total_timesteps = 0); checkpoint equals initialization",
            out.display()
        ),
    }
    Ok(())
}

/// Runs the checkpointed policy deterministically over the test split and
/// writes `report.json`, `equity.csv`, and `trace.csv`.
pub fn cmd_backtest(config: RunConfig, checkpoint_path: Option<PathBuf>) -> Result<PerformanceReport> {
    let prepared = Prepared::new(config)?;
    let out = prepared.config.out.clone();
    fs::create_dir_all(&out)?;
    prepared.write_echo()?;

    let checkpoint_path = checkpoint_path.unwrap_or_else(|| out.join("checkpoint.bin"));
    let policy = prepared.new_policy()?;
    checkpoint::load(&checkpoint_path, &policy.params())?;

    let mut env = prepared.test_env()?;
    let (curve, steps) = evaluate_policy(&mut env, &policy)?;
    let report = PerformanceReport::from_curve(&curve, count_trades(&steps))?;

    write_json_pretty(&out.join("report.json"), &report)?;
    write_equity_csv(&out.join("equity.csv"), &curve)?;
    write_trace(&out.join("trace.csv"), prepared.panel.tickers(), &steps)?;

    println!("{}: {}", out.display(), report_line(&report));
    Ok(report)
}

fn report_line(report: &PerformanceReport) -> String {
    format!(
        "cr {:.2}%, mer {:.2}%, mpb {:.2}%, appt {}, sharpe {}, trades {}",
        report.cr,
        report.mer,
        report.mpb,
        option_cell(report.appt, 2),
        option_cell(report.sharpe, 3),
        report.n_trades,
    )
}

fn option_cell(value: Option<f64>, decimals: usize) -> String {
    match value {
        Some(v) => format!("{v:.decimals$}"),
        None => "-".to_string(),
    }
}

/// One model/window cell of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model: ModelKind,
    pub window: usize,
    pub batch_size: usize,
    /// Run directory holding this row's full artifacts.
    pub out: PathBuf,
    pub report: PerformanceReport,
}

/// Side-by-side results of both model kinds across the compared windows,
/// all trained on the same dataset, splits, and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub manifest: PathBuf,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub seed: u64,
    pub total_timesteps: usize,
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    /// Every compared window must carry each model kind exactly once.
    pub fn validate(&self) -> Result<()> {
        let mut windows: Vec<usize> = self.rows.iter().map(|r| r.window).collect();
        windows.sort_unstable();
        windows.dedup();
        for &window in &windows {
            for model in [ModelKind::Xlstm, ModelKind::Lstm] {
                let count = self
                    .rows
                    .iter()
                    .filter(|r| r.window == window && r.model == model)
                    .count();
                if count != 1 {
                    return Err(CoreError::contract(
                        "compare_report",
                        format!("window {window} lists {model} {count} times, expected once"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Plain-text table, one row per model/window.
    pub fn render_table(&self) -> String {
        let mut text = format!(
            "{:<6} {:>6} {:>6} {:>9} {:>9} {:>9} {:>10} {:>8} {:>7}\n",
            "model", "window", "batch", "cr%", "mer%", "mpb%", "appt", "sharpe", "trades"
        );
        for row in &self.rows {
            text.push_str(&format!(
                "{:<6} {:>6} {:>6} {:>9.2} {:>9.2} {:>9.2} {:>10} {:>8} {:>7}\n",
                row.model.to_string(),
                row.window,
                row.batch_size,
                row.report.cr,
                row.report.mer,
                row.report.mpb,
                option_cell(row.report.appt, 2),
                option_cell(row.report.sharpe, 3),
                row.report.n_trades,
            ));
        }
        text
    }
}

/// The batch size each model kind defaults to in comparisons.
pub fn preset_batch_size(model: ModelKind) -> usize {
    match model {
        ModelKind::Xlstm => 32,
        ModelKind::Lstm => 64,
    }
}

/// Trains and backtests both model kinds — at the configured window, or at
/// windows 30/15/5 with `preset_windows` — and writes `compare.json`.
pub fn cmd_compare(base: RunConfig, preset_windows: bool) -> Result<CompareReport> {
    let manifest = DatasetManifest::load(&base.manifest)?;
    manifest.validate()?;
    // Keep the sparse overrides: unset seq_len/batch_size must stay unset
    // so each row can resolve them against its own window and model.
    let sparse_train = base.train.clone();
    let base = base.resolve(&manifest)?;

    let windows: Vec<usize> = if preset_windows {
        vec![30, 15, 5]
    } else {
        vec![base.window]
    };
    fs::create_dir_all(&base.out)?;

    let mut rows = Vec::new();
    for &window in &windows {
        for model in [ModelKind::Xlstm, ModelKind::Lstm] {
            let mut config = base.clone();
            config.model = model;
            config.window = window;
            config.train.seq_len = sparse_train.seq_len;
            let batch_size = sparse_train
                .batch_size
                .unwrap_or_else(|| preset_batch_size(model));
            config.train.batch_size = Some(batch_size);
            config.out = base.out.join(format!("{model}_w{window}"));

            cmd_train(config.clone())?;
            let report = cmd_backtest(config.clone(), None)?;
            rows.push(CompareRow {
                model,
                window,
                batch_size,
                out: config.out,
                report,
            });
        }
    }

    let report = CompareReport {
        manifest: base.manifest.clone(),
        train_start: base.train_start.expect("resolved"),
        train_end: base.train_end.expect("resolved"),
        test_start: base.test_start.expect("resolved"),
        test_end: base.test_end.expect("resolved"),
        seed: base.seed,
        total_timesteps: base.train.total_timesteps.unwrap_or(0),
        rows,
    };
    report.validate()?;
    write_json_pretty(&base.out.join("compare.json"), &report)?;
    print!("{}", report.render_table());
    Ok(report)
}

/// What `synth` generates: a seeded multi-ticker daily-bar market written
/// as one CSV per ticker plus a dataset manifest with split dates.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub out: PathBuf,
    pub tickers: Vec<String>,
    pub n_days: usize,
    pub seed: u64,
    pub start: NaiveDate,
    /// Per-day log-return drift.
    pub drift: f64,
    /// Per-day log-return standard deviation.
    pub volatility: f64,
    /// Fraction of days assigned to the train split.
    pub train_frac: f64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.tickers.is_empty() {
            return Err(CoreError::contract("synth", "at least one ticker required"));
        }
        let mut unique = self.tickers.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != self.tickers.len() {
            return Err(CoreError::contract("synth", "ticker names must be unique"));
        }
        if self.n_days < 2 {
            return Err(CoreError::contract("synth", "n_days must be >= 2"));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(CoreError::contract(
                "synth",
                format!("train_frac must be in (0, 1), got {}", self.train_frac),
            ));
        }
        Ok(())
    }
}

/// Generates the synthetic market and returns the manifest path.
pub fn cmd_synth(spec: &SynthSpec) -> Result<PathBuf> {
    spec.validate()?;
    fs::create_dir_all(&spec.out)?;

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut entries = Vec::new();
    for (i, ticker) in spec.tickers.iter().enumerate() {
        let config = SynthConfig {
            start: spec.start,
            n_days: spec.n_days,
            drift: spec.drift,
            volatility: spec.volatility,
            seed: spec.seed.wrapping_add(i as u64),
            ..SynthConfig::default()
        };
        let bars = generate_bars(&config)?;
        if i == 0 {
            dates = bars.iter().map(|b| b.date).collect();
        }
        let file = format!("{ticker}.csv");
        write_csv(&spec.out.join(&file), &bars)?;
        entries.push(TickerEntry {
            symbol: ticker.clone(),
            path: PathBuf::from(file),
        });
    }

    // The calendar only depends on the start date, so every ticker shares
    // it; split it by the train fraction.
    let split = ((spec.n_days as f64 * spec.train_frac).ceil() as usize)
        .clamp(1, spec.n_days - 1);
    let manifest = DatasetManifest {
        tickers: entries,
        train_start: dates[0],
        train_end: dates[split - 1],
        test_start: dates[split],
        test_end: dates[spec.n_days - 1],
    };
    let path = spec.out.join("manifest.json");
    manifest.save(&path)?;
    println!(
        "{}: {} tickers x {} days, train {}..{}, test {}..{}",
        spec.out.display(),
        spec.tickers.len(),
        spec.n_days,
        manifest.train_start,
        manifest.train_end,
        manifest.test_start,
        manifest.test_end,
    );
    Ok(path)
}
