//! Multi-ticker date alignment and observation construction.

use chrono::NaiveDate;
use std::collections::HashSet;

use crate::data::bars::OhlcvBar;
use crate::error::{CoreError, Result};

/// Number of per-day, per-ticker features: open, high, low, close,
/// adj_close, log1p(volume).
pub const FEATURES_PER_TICKER: usize = 6;

/// Floor applied to feature standard deviations so constant training
/// features z-score to 0 instead of dividing by ~0.
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
struct FeatureStats {
    mean: f64,
    std: f64,
}

/// Price panel aligned to the date intersection of all tickers.
///
/// Feature values are stored raw in `[day][ticker][feature]` order;
/// observations z-score them with statistics fitted on the training split
/// via [`AlignedPanel::fit_normalization`], so test-period observations
/// reuse training statistics and never peek ahead.
#[derive(Debug, Clone)]
pub struct AlignedPanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    raw: Vec<f64>,
    stats: Option<Vec<FeatureStats>>,
}

impl AlignedPanel {
    /// Aligns per-ticker bar series onto their common dates, preserving the
    /// given ticker order. Dates present for only some tickers are dropped
    /// (intersection, no imputation).
    pub fn align(per_ticker: &[(String, Vec<OhlcvBar>)]) -> Result<Self> {
        if per_ticker.is_empty() {
            return Err(CoreError::Data("align: no tickers given".into()));
        }
        for (symbol, bars) in per_ticker {
            if bars.is_empty() {
                return Err(CoreError::Data(format!("align: ticker {symbol} has no bars")));
            }
        }
        let mut seen = HashSet::new();
        for (symbol, _) in per_ticker {
            if !seen.insert(symbol.as_str()) {
                return Err(CoreError::Data(format!("align: duplicate ticker {symbol}")));
            }
        }

        // Intersect date sets, then sort; each ticker's own dates are
        // strictly increasing already but the intersection is re-sorted to
        // stay independent of iteration order.
        let mut common: HashSet<NaiveDate> =
            per_ticker[0].1.iter().map(|bar| bar.date).collect();
        for (_, bars) in &per_ticker[1..] {
            let dates: HashSet<NaiveDate> = bars.iter().map(|bar| bar.date).collect();
            common.retain(|date| dates.contains(date));
        }
        if common.is_empty() {
            return Err(CoreError::Data(
                "align: tickers share no common dates".into(),
            ));
        }
        let mut dates: Vec<NaiveDate> = common.into_iter().collect();
        dates.sort_unstable();

        let n_tickers = per_ticker.len();
        let mut raw = vec![0.0; dates.len() * n_tickers * FEATURES_PER_TICKER];
        for (ticker_idx, (_, bars)) in per_ticker.iter().enumerate() {
            // Both sides are sorted, so a single forward cursor suffices.
            let mut cursor = bars.iter();
            for (day_idx, date) in dates.iter().enumerate() {
                let bar = cursor
                    .by_ref()
                    .find(|bar| bar.date == *date)
                    .expect("intersection date missing from source bars");
                let base = (day_idx * n_tickers + ticker_idx) * FEATURES_PER_TICKER;
                raw[base] = bar.open;
                raw[base + 1] = bar.high;
                raw[base + 2] = bar.low;
                raw[base + 3] = bar.close;
                raw[base + 4] = bar.adj_close;
                raw[base + 5] = (bar.volume as f64).ln_1p();
            }
        }

        Ok(AlignedPanel {
            dates,
            tickers: per_ticker.iter().map(|(symbol, _)| symbol.clone()).collect(),
            raw,
            stats: None,
        })
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    /// Index of the first panel day with `date >= bound`, if any.
    pub fn first_on_or_after(&self, bound: NaiveDate) -> Option<usize> {
        let idx = self.dates.partition_point(|date| *date < bound);
        (idx < self.dates.len()).then_some(idx)
    }

    /// Index of the last panel day with `date <= bound`, if any.
    pub fn last_on_or_before(&self, bound: NaiveDate) -> Option<usize> {
        self.dates.partition_point(|date| *date <= bound).checked_sub(1)
    }

    /// Resolves an inclusive calendar range to inclusive day indices.
    pub fn split_indices(&self, start: NaiveDate, end: NaiveDate) -> Result<(usize, usize)> {
        if start > end {
            return Err(CoreError::contract(
                "split_indices",
                format!("start {start} is after end {end}"),
            ));
        }
        let lo = self.first_on_or_after(start);
        let hi = self.last_on_or_before(end);
        match (lo, hi) {
            (Some(lo), Some(hi)) if lo <= hi => Ok((lo, hi)),
            _ => Err(CoreError::Data(format!(
                "no panel days inside {start}..={end}"
            ))),
        }
    }

    /// Raw (un-normalized) feature value.
    pub fn raw_feature(&self, day: usize, ticker: usize, feature: usize) -> f64 {
        debug_assert!(day < self.n_days() && ticker < self.n_tickers());
        debug_assert!(feature < FEATURES_PER_TICKER);
        self.raw[(day * self.n_tickers() + ticker) * FEATURES_PER_TICKER + feature]
    }

    /// Adjusted close for one ticker on one day (the execution price).
    pub fn adj_close(&self, day: usize, ticker: usize) -> f64 {
        self.raw_feature(day, ticker, 4)
    }

    /// Adjusted closes for all tickers on one day, in ticker order.
    pub fn adj_closes(&self, day: usize) -> Vec<f64> {
        (0..self.n_tickers())
            .map(|ticker| self.adj_close(day, ticker))
            .collect()
    }

    /// Fits per-ticker, per-feature mean/std over the inclusive day-index
    /// range `[train_start, train_end]`. Later observations always reuse
    /// these statistics.
    pub fn fit_normalization(&mut self, train_start: usize, train_end: usize) -> Result<()> {
        if train_start > train_end || train_end >= self.n_days() {
            return Err(CoreError::contract(
                "fit_normalization",
                format!(
                    "day range {train_start}..={train_end} outside panel of {} days",
                    self.n_days()
                ),
            ));
        }
        let n = (train_end - train_start + 1) as f64;
        let width = self.n_tickers() * FEATURES_PER_TICKER;
        let mut stats = Vec::with_capacity(width);
        for column in 0..width {
            let mut mean = 0.0;
            for day in train_start..=train_end {
                mean += self.raw[day * width + column];
            }
            mean /= n;
            let mut var = 0.0;
            for day in train_start..=train_end {
                let dev = self.raw[day * width + column] - mean;
                var += dev * dev;
            }
            var /= n;
            stats.push(FeatureStats {
                mean,
                std: var.sqrt().max(STD_FLOOR),
            });
        }
        self.stats = Some(stats);
        Ok(())
    }

    /// True once [`AlignedPanel::fit_normalization`] has run.
    pub fn is_fitted(&self) -> bool {
        self.stats.is_some()
    }

    /// Builds the agent's observation at day `t`:
    /// z-scored features for days `t-window+1..=t` (day-major, then ticker,
    /// then feature), followed by `balance / initial_balance` and each
    /// ticker's holdings value at day-`t` prices over `initial_balance`.
    /// Length is always `window * n_tickers * 6 + 1 + n_tickers`.
    pub fn build_observation(
        &self,
        t: usize,
        window: usize,
        balance: f64,
        shares: &[u64],
        initial_balance: f64,
    ) -> Result<Vec<f64>> {
        let stats = self.stats.as_ref().ok_or_else(|| {
            CoreError::contract("build_observation", "normalization stats not fitted")
        })?;
        if window == 0 {
            return Err(CoreError::contract("build_observation", "window must be >= 1"));
        }
        if t < window {
            return Err(CoreError::contract(
                "build_observation",
                format!("day {t} is before the first full window (window {window})"),
            ));
        }
        if t >= self.n_days() {
            return Err(CoreError::contract(
                "build_observation",
                format!("day {t} outside panel of {} days", self.n_days()),
            ));
        }
        if shares.len() != self.n_tickers() {
            return Err(CoreError::dim(
                "build_observation",
                format!("{} share counts for {} tickers", shares.len(), self.n_tickers()),
            ));
        }
        if !(initial_balance.is_finite() && initial_balance > 0.0) {
            return Err(CoreError::contract(
                "build_observation",
                format!("initial balance must be positive, got {initial_balance}"),
            ));
        }

        let width = self.n_tickers() * FEATURES_PER_TICKER;
        let mut obs = Vec::with_capacity(window * width + 1 + self.n_tickers());
        for day in (t + 1 - window)..=t {
            let row = &self.raw[day * width..(day + 1) * width];
            for (value, FeatureStats { mean, std }) in row.iter().zip(stats) {
                obs.push((value - mean) / std);
            }
        }
        obs.push(balance / initial_balance);
        for (ticker, &count) in shares.iter().enumerate() {
            obs.push(count as f64 * self.adj_close(t, ticker) / initial_balance);
        }
        Ok(obs)
    }

    /// Observation length produced by [`AlignedPanel::build_observation`].
    pub fn observation_len(&self, window: usize) -> usize {
        window * self.n_tickers() * FEATURES_PER_TICKER + 1 + self.n_tickers()
    }
}
