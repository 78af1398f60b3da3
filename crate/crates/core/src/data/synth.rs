//! Seeded synthetic market data in the same CSV format as real exports.
//!
//! A geometric random walk with configurable drift/volatility generates
//! weekday bars whose OHLC invariants hold by construction, so tests and
//! demos never depend on network data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::bars::{OhlcvBar, CSV_HEADER};
use crate::error::{CoreError, Result};

/// Parameters of one ticker's synthetic price path.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// First calendar day; weekend starts roll forward to Monday.
    pub start: NaiveDate,
    /// Number of trading days to emit.
    pub n_days: usize,
    /// Price level on the eve of the first day.
    pub start_price: f64,
    /// Mean daily log return.
    pub drift: f64,
    /// Standard deviation of the daily log return.
    pub volatility: f64,
    /// `adj_close = adj_factor * close`, mimicking dividend adjustment.
    pub adj_factor: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            start: NaiveDate::from_ymd_opt(2009, 1, 2).expect("valid date"),
            n_days: 250,
            start_price: 100.0,
            drift: 0.0002,
            volatility: 0.01,
            adj_factor: 0.97,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_days == 0 {
            return Err(CoreError::contract("synth", "n_days must be >= 1"));
        }
        if !(self.start_price.is_finite() && self.start_price > 0.0) {
            return Err(CoreError::contract(
                "synth",
                format!("start_price must be positive, got {}", self.start_price),
            ));
        }
        if !self.drift.is_finite() {
            return Err(CoreError::contract("synth", "drift must be finite"));
        }
        if !(self.volatility.is_finite() && self.volatility >= 0.0) {
            return Err(CoreError::contract(
                "synth",
                format!("volatility must be nonnegative, got {}", self.volatility),
            ));
        }
        if !(self.adj_factor.is_finite() && self.adj_factor > 0.0 && self.adj_factor <= 1.0) {
            return Err(CoreError::contract(
                "synth",
                format!("adj_factor must be in (0, 1], got {}", self.adj_factor),
            ));
        }
        Ok(())
    }
}

fn next_weekday(mut date: NaiveDate) -> NaiveDate {
    while matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
        date = date + Days::new(1);
    }
    date
}

/// Generates `config.n_days` weekday bars, deterministically from the seed.
pub fn generate_bars(config: &SynthConfig) -> Result<Vec<OhlcvBar>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut date = next_weekday(config.start);
    let mut prev_close = config.start_price;
    let mut bars = Vec::with_capacity(config.n_days);

    for _ in 0..config.n_days {
        let z_close: f64 = rng.sample(StandardNormal);
        let z_open: f64 = rng.sample(StandardNormal);
        let z_high: f64 = rng.sample(StandardNormal);
        let z_low: f64 = rng.sample(StandardNormal);
        let z_volume: f64 = rng.sample(StandardNormal);

        let close = prev_close * (config.drift + config.volatility * z_close).exp();
        let open = prev_close * (config.volatility / 4.0 * z_open).exp();
        let high = open.max(close) * (config.volatility / 4.0 * z_high.abs()).exp();
        let low = open.min(close) * (-config.volatility / 4.0 * z_low.abs()).exp();
        let volume = (1_000_000.0 * (0.5 * z_volume).exp()).round() as u64;

        let bar = OhlcvBar {
            date,
            open,
            high,
            low,
            close,
            adj_close: close * config.adj_factor,
            volume,
        };
        if !close.is_finite() {
            return Err(CoreError::numeric(
                "synth",
                format!("price left the finite range on {date}"),
            ));
        }
        bar.validate()?;
        bars.push(bar);

        prev_close = close;
        date = next_weekday(date + Days::new(1));
    }
    Ok(bars)
}

/// Writes bars to `path` in the standard CSV format. Float fields use
/// Rust's shortest round-trip formatting, so reading the file back
/// reproduces the exact values.
pub fn write_csv(path: &Path, bars: &[OhlcvBar]) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for bar in bars {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            bar.date.format("%Y-%m-%d"),
            bar.open,
            bar.high,
            bar.low,
            bar.close,
            bar.adj_close,
            bar.volume
        )?;
    }
    out.flush()?;
    Ok(())
}
