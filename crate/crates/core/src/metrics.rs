//! Trading performance metrics over an equity curve and trade log:
//! cumulative return, maximum earning rate, maximum pullback, average
//! profit per trade, and the annualized Sharpe ratio.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::env::StepResult;
use crate::error::{CoreError, Result};

/// Dated total-asset values of one backtest; the first point is the
/// initial portfolio value.
#[derive(Debug, Clone, PartialEq)]
pub struct EquityCurve {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl EquityCurve {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CoreError::contract("equity_curve", "curve must be nonempty"));
        }
        if dates.len() != values.len() {
            return Err(CoreError::dim(
                "equity_curve",
                format!("{} dates for {} values", dates.len(), values.len()),
            ));
        }
        for &v in &values {
            if !(v.is_finite() && v > 0.0) {
                return Err(CoreError::contract(
                    "equity_curve",
                    format!("asset values must be positive, got {v}"),
                ));
            }
        }
        Ok(EquityCurve { dates, values })
    }
}

/// Total return in percent: `100 * (final - initial) / initial`.
pub fn cumulative_return(values: &[f64]) -> Result<f64> {
    let (first, last) = curve_ends(values, "cumulative_return")?;
    Ok(100.0 * (last - first) / first)
}

/// Best return over the whole run: `100 * max_t (A_t - A_0) / A_0`.
/// Never below the cumulative return, since the maximum includes the
/// final point.
pub fn max_earning_rate(values: &[f64]) -> Result<f64> {
    let (first, _) = curve_ends(values, "max_earning_rate")?;
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(100.0 * (peak - first) / first)
}

/// Deepest peak-to-trough decline in percent:
/// `100 * max_{t1 < t2} (A_t1 - A_t2) / A_t1`, floored at 0.
/// Computed with a running peak in one pass.
pub fn max_pullback(values: &[f64]) -> Result<f64> {
    let (first, _) = curve_ends(values, "max_pullback")?;
    let mut peak = first;
    let mut worst = 0.0_f64;
    for &v in &values[1..] {
        let drawdown = (peak - v) / peak;
        worst = worst.max(drawdown);
        peak = peak.max(v);
    }
    Ok(100.0 * worst)
}

/// Average profit per trade in dollars, undefined when nothing traded.
pub fn appt(p_init: f64, p_final: f64, n_trades: u64) -> Option<f64> {
    if n_trades == 0 {
        return None;
    }
    Some((p_final - p_init) / n_trades as f64)
}

/// Annualized Sharpe ratio over per-period returns with sample (n-1)
/// standard deviation: `sqrt(annualization) * (mean - risk_free) / std`.
/// Undefined (None) with fewer than two returns or zero dispersion.
pub fn sharpe(
    returns: &[f64],
    risk_free_daily: f64,
    annualization: f64,
) -> Result<Option<f64>> {
    if !(annualization.is_finite() && annualization > 0.0) {
        return Err(CoreError::contract(
            "sharpe",
            format!("annualization must be positive, got {annualization}"),
        ));
    }
    if !risk_free_daily.is_finite() {
        return Err(CoreError::contract("sharpe", "risk-free rate must be finite"));
    }
    if returns.len() < 2 {
        return Ok(None);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(None);
    }
    Ok(Some(annualization.sqrt() * (mean - risk_free_daily) / std))
}

/// Day-over-day simple returns of the curve.
pub fn daily_returns(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

/// Number of trades in an episode: ticker-days with nonzero executed
/// shares (each partial fill of one ticker on one day counts once).
pub fn count_trades(steps: &[StepResult]) -> u64 {
    steps
        .iter()
        .map(|s| s.info.executed.iter().filter(|e| **e != 0).count() as u64)
        .sum()
}

fn curve_ends(values: &[f64], op: &'static str) -> Result<(f64, f64)> {
    match (values.first(), values.last()) {
        (Some(&first), Some(&last)) if first > 0.0 => Ok((first, last)),
        (Some(&first), _) => Err(CoreError::contract(
            op,
            format!("initial value must be positive, got {first}"),
        )),
        _ => Err(CoreError::contract(op, "curve must be nonempty")),
    }
}

/// The five reported metrics. `appt` and `sharpe` are omitted from the
/// JSON when undefined rather than reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    /// Cumulative return, percent.
    pub cr: f64,
    /// Maximum earning rate, percent.
    pub mer: f64,
    /// Maximum pullback, percent.
    pub mpb: f64,
    /// Average profit per trade, dollars.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub appt: Option<f64>,
    /// Annualized Sharpe ratio.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharpe: Option<f64>,
    pub n_trades: u64,
}

impl PerformanceReport {
    /// Computes every metric from the curve and the trade count, using
    /// zero risk-free rate and 252-day annualization for the Sharpe ratio.
    pub fn from_curve(curve: &EquityCurve, n_trades: u64) -> Result<Self> {
        let values = &curve.values;
        Ok(PerformanceReport {
            cr: cumulative_return(values)?,
            mer: max_earning_rate(values)?,
            mpb: max_pullback(values)?,
            appt: appt(values[0], *values.last().expect("nonempty"), n_trades),
            sharpe: sharpe(&daily_returns(values), 0.0, 252.0)?,
            n_trades,
        })
    }
}

/// Writes the curve as two-column CSV (`date,total_value`).
pub fn write_equity_csv(path: &Path, curve: &EquityCurve) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "date,total_value")?;
    for (date, value) in curve.dates.iter().zip(&curve.values) {
        writeln!(out, "{},{}", date.format("%Y-%m-%d"), value)?;
    }
    out.flush()?;
    Ok(())
}
