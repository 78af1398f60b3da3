//! Market turbulence: a Mahalanobis distance of today's cross-ticker
//! return vector from its trailing history, plus the trading-halt threshold.

use crate::data::panel::AlignedPanel;
use crate::error::{CoreError, Result};

/// Trailing history length (trading days) for the return distribution.
pub const TRAILING_WINDOW: usize = 252;

/// Ridge added to the covariance diagonal before inversion.
const COV_RIDGE: f64 = 1e-8;

/// Mahalanobis distance `(y - mu)' Sigma^{-1} (y - mu)` where `mu` and
/// `Sigma` are the mean and sample covariance (n-1 denominator) of
/// `history` rows. The covariance gets `1e-8` added to its diagonal, and
/// the quadratic form is evaluated as `||L^{-1}(y - mu)||^2` from the
/// Cholesky factor, which is nonnegative by construction.
pub fn mahalanobis(history: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let n = y.len();
    if n == 0 {
        return Err(CoreError::contract("mahalanobis", "empty observation vector"));
    }
    if history.len() < n + 2 {
        return Err(CoreError::contract(
            "mahalanobis",
            format!(
                "need at least {} history rows for dimension {n}, got {}",
                n + 2,
                history.len()
            ),
        ));
    }
    for (i, row) in history.iter().enumerate() {
        if row.len() != n {
            return Err(CoreError::dim(
                "mahalanobis",
                format!("history row {i} has length {}, expected {n}", row.len()),
            ));
        }
    }

    let rows = history.len() as f64;
    let mut mean = vec![0.0; n];
    for row in history {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows;
    }

    // Sample covariance, then the ridge.
    let mut cov = vec![0.0; n * n];
    for row in history {
        for i in 0..n {
            let di = row[i] - mean[i];
            for j in i..n {
                cov[i * n + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let value = cov[i * n + j] / (rows - 1.0);
            cov[i * n + j] = value;
            cov[j * n + i] = value;
        }
        cov[i * n + i] += COV_RIDGE;
    }

    let chol = cholesky(&cov, n)?;
    let deviation: Vec<f64> = y.iter().zip(&mean).map(|(a, b)| a - b).collect();

    // Forward-solve L z = deviation; the distance is ||z||^2.
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut sum = deviation[i];
        for j in 0..i {
            sum -= chol[i * n + j] * z[j];
        }
        z[i] = sum / chol[i * n + i];
    }
    Ok(z.iter().map(|v| v * v).sum())
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix stored row-major.
fn cholesky(matrix: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        for i in j..n {
            let mut sum = matrix[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(CoreError::numeric(
                        "cholesky",
                        format!("non-positive-definite pivot {sum} at column {j}"),
                    ));
                }
                l[j * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Nearest-rank percentile: the smallest element with at least `pct`
/// percent of the data at or below it.
pub fn nearest_rank_percentile(values: &[f64], pct: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CoreError::contract("percentile", "empty sample"));
    }
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(CoreError::contract(
            "percentile",
            format!("percentile must be in (0, 100], got {pct}"),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-NaN turbulence"));
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Per-day turbulence aligned to a panel, plus the halt threshold fitted on
/// the training split.
#[derive(Debug, Clone)]
pub struct TurbulenceSeries {
    values: Vec<f64>,
    threshold: f64,
}

impl TurbulenceSeries {
    /// Computes turbulence for every panel day and fits the threshold as the
    /// `percentile`-th nearest-rank percentile over training-split days
    /// (inclusive index range).
    ///
    /// Day `t`'s observation is the day-over-day adjusted-close simple
    /// return realized on day `t`; its history is the trailing
    /// [`TRAILING_WINDOW`] of returns from days strictly before `t`. Days
    /// without a return or with fewer than `n_tickers + 2` history rows get
    /// turbulence 0.
    pub fn from_panel(
        panel: &AlignedPanel,
        train_start: usize,
        train_end: usize,
        percentile: f64,
    ) -> Result<Self> {
        if train_start > train_end || train_end >= panel.n_days() {
            return Err(CoreError::contract(
                "turbulence",
                format!(
                    "train day range {train_start}..={train_end} outside panel of {} days",
                    panel.n_days()
                ),
            ));
        }
        let n = panel.n_tickers();

        // returns[t-1] is the return vector realized on panel day t.
        let mut returns: Vec<Vec<f64>> = Vec::with_capacity(panel.n_days().saturating_sub(1));
        for t in 1..panel.n_days() {
            let row: Vec<f64> = (0..n)
                .map(|ticker| panel.adj_close(t, ticker) / panel.adj_close(t - 1, ticker) - 1.0)
                .collect();
            returns.push(row);
        }

        let mut values = vec![0.0; panel.n_days()];
        for t in 1..panel.n_days() {
            // History: returns realized strictly before day t.
            let available = t - 1;
            if available < n + 2 {
                continue;
            }
            let start = available.saturating_sub(TRAILING_WINDOW);
            let history = &returns[start..available];
            values[t] = mahalanobis(history, &returns[t - 1])?;
        }

        let threshold = nearest_rank_percentile(&values[train_start..=train_end], percentile)?;
        Ok(TurbulenceSeries { values, threshold })
    }

    pub fn value(&self, day: usize) -> f64 {
        self.values[day]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Replaces the fitted threshold (configuration override).
    pub fn set_threshold(&mut self, threshold: f64) {
        self.threshold = threshold;
    }
}
