//! The stock-trading episode: portfolio accounting, order execution with
//! proportional costs, the turbulence halt, and the step reward.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{AlignedPanel, TurbulenceSeries};
use crate::error::{CoreError, Result};

/// Episode parameters. `turbulence_threshold` is usually copied from a
/// fitted [`TurbulenceSeries`]; `f64::INFINITY` disables the gate.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EnvConfig {
    pub initial_balance: f64,
    /// Maximum shares traded per ticker per step.
    pub h_max: u32,
    /// Fee as a fraction of traded notional.
    pub cost_rate: f64,
    /// Serialized as null when infinite (JSON has no infinity).
    #[serde(with = "threshold_serde")]
    pub turbulence_threshold: f64,
    /// Scale applied to the raw dollar reward before clamping to [-1, 1].
    pub reward_scale: f64,
    /// Reward returned on turbulent days (the algorithm fixes this at -1).
    pub penalty_value: f64,
    /// When true, turbulent days still trade (the penalty reward remains).
    pub trade_through_turbulence: bool,
}

/// Maps the disabled-gate threshold (infinity) to JSON null and back.
mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            serializer.serialize_some(value)
        } else {
            serializer.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(deserializer)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            initial_balance: 1_000_000.0,
            h_max: 100,
            cost_rate: 0.001,
            turbulence_threshold: f64::INFINITY,
            reward_scale: 1e-4,
            penalty_value: -1.0,
            trade_through_turbulence: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_balance.is_finite() && self.initial_balance > 0.0) {
            return Err(CoreError::contract(
                "env_config",
                format!("initial_balance must be positive, got {}", self.initial_balance),
            ));
        }
        if self.h_max < 1 {
            return Err(CoreError::contract("env_config", "h_max must be >= 1"));
        }
        if !(self.cost_rate >= 0.0 && self.cost_rate < 1.0) {
            return Err(CoreError::contract(
                "env_config",
                format!("cost_rate must be in [0, 1), got {}", self.cost_rate),
            ));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(CoreError::contract(
                "env_config",
                format!("reward_scale must be positive, got {}", self.reward_scale),
            ));
        }
        if !self.penalty_value.is_finite() {
            return Err(CoreError::contract("env_config", "penalty_value must be finite"));
        }
        if self.turbulence_threshold.is_nan() {
            return Err(CoreError::contract(
                "env_config",
                "turbulence_threshold must not be NaN",
            ));
        }
        Ok(())
    }
}

/// Cash, integer holdings, and bookkeeping for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub balance: f64,
    /// Nonnegative share counts per ticker (no shorting by construction).
    pub shares: Vec<u64>,
    /// Current panel day index.
    pub day: usize,
    /// Total value after the previous step (reward baseline).
    pub prev_total_value: f64,
}

/// Everything observable about one executed step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Date of the day the trades executed on.
    pub date: NaiveDate,
    /// Signed executed shares per ticker (+buy, -sell).
    pub executed: Vec<i64>,
    /// Transaction fees paid this step, in dollars.
    pub cost: f64,
    /// Turbulence value on the execution day.
    pub turbulence: f64,
    /// Whether the turbulence gate fired.
    pub turbulent: bool,
    /// Cash after the step.
    pub balance: f64,
    /// Portfolio value marked at next-day prices.
    pub total_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Executes one step's orders against `state` at the given prices.
///
/// Desired size per ticker is `round(action_i * h_max)` shares with the
/// action clipped to [-1, 1]. Sells run first in ticker order (capped at
/// holdings), then buys (each capped so notional plus fee fits the
/// remaining cash). Returns signed executed shares and total fees.
pub fn execute_trades(
    state: &mut PortfolioState,
    action: &[f64],
    prices: &[f64],
    config: &EnvConfig,
) -> Result<(Vec<i64>, f64)> {
    if action.len() != state.shares.len() || prices.len() != state.shares.len() {
        return Err(CoreError::dim(
            "execute_trades",
            format!(
                "action {} / prices {} / holdings {}",
                action.len(),
                prices.len(),
                state.shares.len()
            ),
        ));
    }
    for &a in action {
        if a.is_nan() {
            return Err(CoreError::contract("execute_trades", "action contains NaN"));
        }
    }
    for &p in prices {
        if !(p.is_finite() && p > 0.0) {
            return Err(CoreError::contract(
                "execute_trades",
                format!("prices must be positive, got {p}"),
            ));
        }
    }

    let desired: Vec<i64> = action
        .iter()
        .map(|a| (a.clamp(-1.0, 1.0) * f64::from(config.h_max)).round() as i64)
        .collect();
    let mut executed = vec![0_i64; desired.len()];
    let mut total_cost = 0.0;

    // Sells first: liquidation proceeds can fund this step's buys.
    for (i, &want) in desired.iter().enumerate() {
        if want >= 0 {
            continue;
        }
        let sell = (want.unsigned_abs()).min(state.shares[i]);
        if sell == 0 {
            continue;
        }
        let notional = sell as f64 * prices[i];
        let fee = notional * config.cost_rate;
        state.balance += notional - fee;
        state.shares[i] -= sell;
        executed[i] = -(sell as i64);
        total_cost += fee;
    }

    for (i, &want) in desired.iter().enumerate() {
        if want <= 0 {
            continue;
        }
        let affordable = (state.balance / (prices[i] * (1.0 + config.cost_rate))).floor();
        let mut buy = (want as u64).min(affordable as u64);
        // The floor bound is exact in real arithmetic; back off if float
        // rounding still overshoots the cash on hand.
        while buy > 0 {
            let notional = buy as f64 * prices[i];
            if notional + notional * config.cost_rate <= state.balance {
                break;
            }
            buy -= 1;
        }
        if buy == 0 {
            continue;
        }
        let notional = buy as f64 * prices[i];
        let fee = notional * config.cost_rate;
        state.balance -= notional + fee;
        state.shares[i] += buy;
        executed[i] = buy as i64;
        total_cost += fee;
    }

    Ok((executed, total_cost))
}

/// The step reward: the fixed penalty on turbulent days, otherwise the
/// scaled-and-clamped dollar gain net of transaction costs.
pub fn compute_reward(
    turbulence: f64,
    config: &EnvConfig,
    prev_total_value: f64,
    total_value: f64,
    cost: f64,
) -> f64 {
    if turbulence > config.turbulence_threshold {
        return config.penalty_value;
    }
    let raw = (total_value - prev_total_value) - cost;
    (raw * config.reward_scale).clamp(-1.0, 1.0)
}

/// One tradable split of the panel, stepped day by day.
#[derive(Debug)]
pub struct TradingEnv<'a> {
    config: EnvConfig,
    panel: &'a AlignedPanel,
    turbulence: &'a TurbulenceSeries,
    window: usize,
    /// First tradable day index (split start + window).
    first_day: usize,
    /// Last panel day of the split; reaching it ends the episode.
    last_day: usize,
    state: PortfolioState,
    done: bool,
}

impl<'a> TradingEnv<'a> {
    /// Builds an environment over the inclusive day-index split
    /// `[split.0, split.1]`. The split must leave at least one step after
    /// the observation window: `split length >= window + 2`.
    pub fn new(
        config: EnvConfig,
        panel: &'a AlignedPanel,
        turbulence: &'a TurbulenceSeries,
        split: (usize, usize),
        window: usize,
    ) -> Result<Self> {
        config.validate()?;
        if !panel.is_fitted() {
            return Err(CoreError::contract(
                "trading_env",
                "panel normalization must be fitted before trading",
            ));
        }
        if window == 0 {
            return Err(CoreError::contract("trading_env", "window must be >= 1"));
        }
        let (lo, hi) = split;
        if hi >= panel.n_days() || lo > hi {
            return Err(CoreError::contract(
                "trading_env",
                format!("split {lo}..={hi} outside panel of {} days", panel.n_days()),
            ));
        }
        if turbulence.values().len() != panel.n_days() {
            return Err(CoreError::dim(
                "trading_env",
                format!(
                    "turbulence series covers {} days, panel has {}",
                    turbulence.values().len(),
                    panel.n_days()
                ),
            ));
        }
        let len = hi - lo + 1;
        if len < window + 2 {
            return Err(CoreError::contract(
                "trading_env",
                format!("split of {len} days cannot fit window {window} plus one step"),
            ));
        }
        let n = panel.n_tickers();
        let mut env = TradingEnv {
            config,
            panel,
            turbulence,
            window,
            first_day: lo + window,
            last_day: hi,
            state: PortfolioState {
                balance: 0.0,
                shares: vec![0; n],
                day: 0,
                prev_total_value: 0.0,
            },
            done: true,
        };
        env.reset_state();
        Ok(env)
    }

    fn reset_state(&mut self) {
        self.state = PortfolioState {
            balance: self.config.initial_balance,
            shares: vec![0; self.panel.n_tickers()],
            day: self.first_day,
            prev_total_value: self.config.initial_balance,
        };
        self.done = false;
    }

    /// Restarts the episode and returns the initial observation.
    pub fn reset(&mut self) -> Result<Vec<f64>> {
        self.reset_state();
        self.observation()
    }

    /// Observation at the current day for the current portfolio.
    pub fn observation(&self) -> Result<Vec<f64>> {
        self.panel.build_observation(
            self.state.day,
            self.window,
            self.state.balance,
            &self.state.shares,
            self.config.initial_balance,
        )
    }

    pub fn observation_len(&self) -> usize {
        self.panel.observation_len(self.window)
    }

    pub fn n_tickers(&self) -> usize {
        self.panel.n_tickers()
    }

    /// Steps per episode (reset to done).
    pub fn episode_len(&self) -> usize {
        self.last_day - self.first_day
    }

    pub fn state(&self) -> &PortfolioState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Calendar date of the current day.
    pub fn current_date(&self) -> NaiveDate {
        self.panel.dates()[self.state.day]
    }

    /// Marked-to-market portfolio value at the current day's prices.
    pub fn total_value(&self) -> f64 {
        let holdings: f64 = self
            .state
            .shares
            .iter()
            .enumerate()
            .map(|(i, &count)| count as f64 * self.panel.adj_close(self.state.day, i))
            .sum();
        self.state.balance + holdings
    }

    /// Executes `action` on the current day, advances one day, and rewards
    /// the value change. On turbulent days (turbulence above the threshold)
    /// the action is overridden to hold — unless `trade_through_turbulence`
    /// — and the reward is the fixed penalty either way.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(CoreError::contract(
                "trading_env",
                "step called after the episode finished",
            ));
        }
        let t = self.state.day;
        let date = self.panel.dates()[t];
        let prices = self.panel.adj_closes(t);
        let turb_value = self.turbulence.value(t);
        let turbulent = turb_value > self.config.turbulence_threshold;

        let (executed, cost) = if turbulent && !self.config.trade_through_turbulence {
            (vec![0; prices.len()], 0.0)
        } else {
            execute_trades(&mut self.state, action, &prices, &self.config)?
        };

        self.state.day = t + 1;
        let total_value = self.total_value();
        let reward = compute_reward(
            turb_value,
            &self.config,
            self.state.prev_total_value,
            total_value,
            cost,
        );
        self.state.prev_total_value = total_value;
        self.done = self.state.day == self.last_day;

        Ok(StepResult {
            obs: self.observation()?,
            reward,
            done: self.done,
            info: StepInfo {
                date,
                executed,
                cost,
                turbulence: turb_value,
                turbulent,
                balance: self.state.balance,
                total_value,
            },
        })
    }
}

/// Writes an episode trace as CSV: one row per step with the execution
/// date, signed executed shares per ticker, fees, cash, total value,
/// turbulence, and reward.
pub fn write_trace(path: &Path, tickers: &[String], steps: &[StepResult]) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    write!(out, "date")?;
    for ticker in tickers {
        write!(out, ",shares_{ticker}")?;
    }
    writeln!(out, ",cost,balance,total_value,turbulence,reward")?;
    for step in steps {
        write!(out, "{}", step.info.date.format("%Y-%m-%d"))?;
        for shares in &step.info.executed {
            write!(out, ",{shares}")?;
        }
        writeln!(
            out,
            ",{},{},{},{},{}",
            step.info.cost,
            step.info.balance,
            step.info.total_value,
            step.info.turbulence,
            step.reward
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_bars, AlignedPanel, OhlcvBar, SynthConfig, TurbulenceSeries};
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bar(date: NaiveDate, price: f64) -> OhlcvBar {
        OhlcvBar {
            date,
            open: price,
            high: price * 1.01,
            low: price * 0.99,
            close: price,
            adj_close: price,
            volume: 1000,
        }
    }

    fn panel_from_price_rows(tickers: &[&str], rows: &[Vec<f64>]) -> AlignedPanel {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let per_ticker: Vec<(String, Vec<OhlcvBar>)> = tickers
            .iter()
            .enumerate()
            .map(|(ticker, symbol)| {
                let bars = rows
                    .iter()
                    .enumerate()
                    .map(|(day, prices)| {
                        bar(start + chrono::Days::new(day as u64), prices[ticker])
                    })
                    .collect();
                (symbol.to_string(), bars)
            })
            .collect();
        let mut panel = AlignedPanel::align(&per_ticker).expect("align");
        let last = panel.n_days() - 1;
        panel.fit_normalization(0, last).expect("fit");
        panel
    }

    fn series_for(panel: &AlignedPanel) -> TurbulenceSeries {
        TurbulenceSeries::from_panel(panel, 0, panel.n_days() - 1, 99.0).expect("series")
    }

    fn constant_panel(n_tickers: usize, n_days: usize, price: f64) -> AlignedPanel {
        let tickers: Vec<String> = (0..n_tickers).map(|i| format!("T{i}")).collect();
        let names: Vec<&str> = tickers.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = (0..n_days).map(|_| vec![price; n_tickers]).collect();
        panel_from_price_rows(&names, &rows)
    }

    #[test]
    fn config_json_round_trips_including_the_infinite_threshold() {
        let disabled = EnvConfig::default();
        let text = serde_json::to_string(&disabled).expect("serialize");
        assert!(text.contains("\"turbulence_threshold\":null"), "{text}");
        let back: EnvConfig = serde_json::from_str(&text).expect("parse");
        assert_eq!(back, disabled);

        let fitted = EnvConfig {
            turbulence_threshold: 3.75,
            ..EnvConfig::default()
        };
        let text = serde_json::to_string(&fitted).expect("serialize");
        let back: EnvConfig = serde_json::from_str(&text).expect("parse");
        assert_eq!(back, fitted);

        // Absent field falls back to the disabled gate.
        let sparse: EnvConfig = serde_json::from_str("{}").expect("parse");
        assert_eq!(sparse.turbulence_threshold, f64::INFINITY);
    }

    #[test]
    fn reset_starts_with_the_full_balance() {
        let panel = constant_panel(1, 8, 10.0);
        let series = series_for(&panel);
        let mut env = TradingEnv::new(
            EnvConfig::default(),
            &panel,
            &series,
            (0, 7),
            2,
        )
        .expect("env");
        let obs = env.reset().expect("reset");
        assert_eq!(env.total_value(), 1_000_000.0);
        assert_eq!(env.state().day, 2);
        // Portfolio block: cash fraction 1.0, holdings 0.
        assert_eq!(obs[obs.len() - 2], 1.0);
        assert_eq!(obs[obs.len() - 1], 0.0);

        let again = env.reset().expect("reset");
        assert_eq!(obs, again);
    }

    #[test]
    fn short_splits_are_rejected() {
        let panel = constant_panel(1, 8, 10.0);
        let series = series_for(&panel);
        // Window 2 needs at least 4 split days; 3 must fail.
        let err = TradingEnv::new(EnvConfig::default(), &panel, &series, (0, 2), 2)
            .expect_err("must reject");
        assert!(matches!(err, CoreError::Contract { .. }));
        assert!(TradingEnv::new(EnvConfig::default(), &panel, &series, (0, 3), 2).is_ok());
    }

    #[test]
    fn buying_pays_notional_plus_fee() {
        let panel = constant_panel(1, 8, 10.0);
        let series = series_for(&panel);
        let mut env =
            TradingEnv::new(EnvConfig::default(), &panel, &series, (0, 7), 2).expect("env");
        env.reset().expect("reset");
        let result = env.step(&[1.0]).expect("step");
        // 100 shares at $10: notional 1000, fee 1.
        assert_eq!(result.info.executed, vec![100]);
        assert_eq!(result.info.cost, 1.0);
        assert_eq!(env.state().balance, 998_999.0);
        assert_eq!(env.state().shares, vec![100]);
        // Constant prices: the step loses exactly the fee.
        assert_eq!(result.info.total_value, 999_999.0);
    }

    #[test]
    fn reward_scales_and_subtracts_cost() {
        let config = EnvConfig::default();
        let reward = compute_reward(0.0, &config, 1_000_000.0, 1_005_000.0, 10.0);
        assert!((reward - 0.499).abs() < 1e-12, "got {reward}");

        // Clamped at the rails.
        let reward = compute_reward(0.0, &config, 1_000_000.0, 1_020_001.0, 0.0);
        assert_eq!(reward, 1.0);
        let reward = compute_reward(0.0, &config, 1_020_001.0, 1_000_000.0, 0.0);
        assert_eq!(reward, -1.0);

        // Zero change, zero cost: exactly zero.
        assert_eq!(compute_reward(0.0, &config, 5.0, 5.0, 0.0), 0.0);
    }

    #[test]
    fn turbulent_days_halt_trading_and_pay_the_penalty() {
        let panel = constant_panel(1, 8, 10.0);
        let series = series_for(&panel);
        let config = EnvConfig {
            turbulence_threshold: -1.0, // every day counts as turbulent
            ..EnvConfig::default()
        };
        let mut env = TradingEnv::new(config, &panel, &series, (0, 7), 2).expect("env");
        env.reset().expect("reset");
        let result = env.step(&[1.0]).expect("step");
        assert_eq!(result.reward, -1.0);
        assert!(result.info.turbulent);
        assert_eq!(result.info.executed, vec![0]);
        assert_eq!(result.info.cost, 0.0);
        assert_eq!(env.state().balance, 1_000_000.0);

        // Trading through the gate still pays the penalty but executes.
        let config = EnvConfig {
            turbulence_threshold: -1.0,
            trade_through_turbulence: true,
            ..EnvConfig::default()
        };
        let mut env = TradingEnv::new(config, &panel, &series, (0, 7), 2).expect("env");
        env.reset().expect("reset");
        let result = env.step(&[1.0]).expect("step");
        assert_eq!(result.reward, -1.0);
        assert_eq!(result.info.executed, vec![100]);
    }

    #[test]
    fn sells_fund_same_step_buys() {
        // Ticker A at $9000, B at $5000. Buying 100 A needs $900k + fee,
        // which only fits if the 100 B shares sell first.
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![9000.0, 5000.0]).collect();
        let panel = panel_from_price_rows(&["A", "B"], &rows);
        let series = series_for(&panel);
        let mut env =
            TradingEnv::new(EnvConfig::default(), &panel, &series, (0, 9), 2).expect("env");
        env.reset().expect("reset");

        let first = env.step(&[0.0, 1.0]).expect("step");
        assert_eq!(first.info.executed, vec![0, 100]);
        assert_eq!(env.state().balance, 1_000_000.0 - 500_000.0 - 500.0);

        let second = env.step(&[1.0, -1.0]).expect("step");
        assert_eq!(second.info.executed, vec![100, -100]);
        assert_eq!(env.state().shares, vec![100, 0]);
        // Sell proceeds: +500000 - 500; buy: -900000 - 900.
        let expected = 499_500.0 + 499_500.0 - 900_900.0;
        assert!((env.state().balance - expected).abs() < 1e-9);
    }

    #[test]
    fn selling_zero_holdings_executes_nothing() {
        let panel = constant_panel(1, 8, 10.0);
        let series = series_for(&panel);
        let mut env =
            TradingEnv::new(EnvConfig::default(), &panel, &series, (0, 7), 2).expect("env");
        env.reset().expect("reset");
        let result = env.step(&[-1.0]).expect("step");
        assert_eq!(result.info.executed, vec![0]);
        assert_eq!(result.info.cost, 0.0);
        assert_eq!(env.state().balance, 1_000_000.0);
        assert_eq!(result.reward, 0.0);
    }

    #[test]
    fn buys_are_capped_by_cash_including_fees() {
        let mut state = PortfolioState {
            balance: 100.5,
            shares: vec![0],
            day: 0,
            prev_total_value: 100.5,
        };
        let config = EnvConfig::default();
        // Affordable: floor(100.5 / 10.01) = 10 shares.
        let (executed, cost) =
            execute_trades(&mut state, &[1.0], &[10.0], &config).expect("trades");
        assert_eq!(executed, vec![10]);
        assert!((cost - 0.1).abs() < 1e-12);
        assert!((state.balance - 0.4).abs() < 1e-9);
        assert!(state.balance >= 0.0);
    }

    #[test]
    fn mark_to_market_gain_flows_into_the_reward() {
        // Price 10 on the trade day, 20 the day after.
        let rows = vec![
            vec![10.0],
            vec![10.0],
            vec![20.0],
        ];
        let panel = panel_from_price_rows(&["A"], &rows);
        let series = series_for(&panel);
        let mut env =
            TradingEnv::new(EnvConfig::default(), &panel, &series, (0, 2), 1).expect("env");
        env.reset().expect("reset");
        let result = env.step(&[1.0]).expect("step");
        // Bought 100 @ 10 (fee 1), repriced to 20: value 998999 + 2000.
        assert_eq!(result.info.total_value, 1_000_999.0);
        // raw = 999 - 1 = 998 dollars → reward 0.0998.
        assert!((result.reward - 0.0998).abs() < 1e-12, "got {}", result.reward);
        assert!(result.done);

        let err = env.step(&[0.0]).expect_err("episode is over");
        assert!(matches!(err, CoreError::Contract { .. }));
    }

    #[test]
    fn accounting_identity_over_random_episodes() {
        let bars_a = generate_bars(&SynthConfig {
            n_days: 120,
            seed: 11,
            volatility: 0.02,
            ..SynthConfig::default()
        })
        .expect("bars");
        let bars_b = generate_bars(&SynthConfig {
            n_days: 120,
            seed: 12,
            volatility: 0.03,
            drift: -0.001,
            ..SynthConfig::default()
        })
        .expect("bars");
        let mut panel =
            AlignedPanel::align(&[("A".into(), bars_a), ("B".into(), bars_b)]).expect("align");
        panel.fit_normalization(0, 119).expect("fit");
        let mut series = series_for(&panel);
        // Finite threshold so some days are turbulent.
        let median = crate::data::nearest_rank_percentile(series.values(), 50.0).unwrap();
        series.set_threshold(median);
        let config = EnvConfig {
            turbulence_threshold: median,
            ..EnvConfig::default()
        };

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut env = TradingEnv::new(config, &panel, &series, (0, 119), 5).expect("env");
        let mut steps = 0_usize;
        while steps < 2_000 {
            env.reset().expect("reset");
            loop {
                let action: Vec<f64> = (0..2)
                    .map(|_| rng.random_range(-1.5..=1.5)) // exercises clipping
                    .collect();
                let result = env.step(&action).expect("step");
                steps += 1;

                // Identity: recorded total value == cash + marked holdings.
                let day = env.state().day;
                let holdings: f64 = env
                    .state()
                    .shares
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| c as f64 * panel.adj_close(day, i))
                    .sum();
                let recomputed = env.state().balance + holdings;
                let scale = result.info.total_value.abs().max(1.0);
                assert!(
                    (recomputed - result.info.total_value).abs() / scale < 1e-6,
                    "identity violated at step {steps}"
                );
                assert!(env.state().balance >= 0.0);
                assert!(result.reward.is_finite() && result.reward.abs() <= 1.0);

                // Fees exactly when shares execute.
                let traded: i64 = result.info.executed.iter().map(|e| e.abs()).sum();
                assert_eq!(result.info.cost > 0.0, traded > 0, "step {steps}");
                if result.info.turbulent {
                    assert_eq!(result.reward, -1.0);
                    assert_eq!(traded, 0);
                }
                if result.done {
                    break;
                }
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_trajectories() {
        let bars = generate_bars(&SynthConfig {
            n_days: 60,
            seed: 5,
            volatility: 0.02,
            ..SynthConfig::default()
        })
        .expect("bars");
        let mut panel = AlignedPanel::align(&[("A".into(), bars)]).expect("align");
        panel.fit_normalization(0, 59).expect("fit");
        let series = series_for(&panel);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actions: Vec<Vec<f64>> = (0..54)
            .map(|_| vec![rng.random_range(-1.0..=1.0)])
            .collect();

        let run = |panel: &AlignedPanel, series: &TurbulenceSeries| -> Vec<StepResult> {
            let mut env =
                TradingEnv::new(EnvConfig::default(), panel, series, (0, 59), 5).expect("env");
            env.reset().expect("reset");
            actions.iter().map(|a| env.step(a).expect("step")).collect()
        };
        let a = run(&panel, &series);
        let b = run(&panel, &series);
        assert_eq!(a, b);
    }

    #[test]
    fn trace_csv_has_one_row_per_step() {
        let panel = constant_panel(2, 10, 10.0);
        let series = series_for(&panel);
        let mut env =
            TradingEnv::new(EnvConfig::default(), &panel, &series, (0, 9), 2).expect("env");
        env.reset().expect("reset");
        let mut steps = Vec::new();
        loop {
            let result = env.step(&[0.5, -0.5]).expect("step");
            let done = result.done;
            steps.push(result);
            if done {
                break;
            }
        }
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("trace.csv");
        write_trace(&path, &["T0".into(), "T1".into()], &steps).expect("write");
        let text = std::fs::read_to_string(&path).expect("read");
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "date,shares_T0,shares_T1,cost,balance,total_value,turbulence,reward"
        );
        assert_eq!(lines.len(), steps.len() + 1);
        assert!(lines[1].starts_with("2020-01-03,50,0,"));
    }
}
