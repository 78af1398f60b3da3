//! Daily OHLCV bars and CSV ingestion in the Yahoo Finance export format.

use std::path::Path;

use chrono::NaiveDate;

use crate::error::{CoreError, Result};

/// Expected header of every input CSV, in order.
pub const CSV_HEADER: [&str; 7] = [
    "Date",
    "Open",
    "High",
    "Low",
    "Close",
    "Adj Close",
    "Volume",
];

/// One trading day of a single ticker.
///
/// `low`/`high` bound `open` and `close`; `adj_close` is exempt from those
/// bounds because split/dividend adjustment rescales it independently of the
/// unadjusted intraday range (real exports routinely have `adj_close < low`).
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    pub volume: u64,
}

impl OhlcvBar {
    /// Checks the price invariants: all prices positive and finite,
    /// `low <= min(open, close)`, `high >= max(open, close)`.
    pub fn validate(&self) -> Result<()> {
        let prices = [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
            ("adj_close", self.adj_close),
        ];
        for (name, value) in prices {
            if !value.is_finite() || value <= 0.0 {
                return Err(CoreError::Data(format!(
                    "{}: {name} must be a positive finite price, got {value}",
                    self.date
                )));
            }
        }
        if self.low > self.open.min(self.close) {
            return Err(CoreError::Data(format!(
                "{}: low {} exceeds min(open, close) = {}",
                self.date,
                self.low,
                self.open.min(self.close)
            )));
        }
        if self.high < self.open.max(self.close) {
            return Err(CoreError::Data(format!(
                "{}: high {} is below max(open, close) = {}",
                self.date,
                self.high,
                self.open.max(self.close)
            )));
        }
        Ok(())
    }
}

/// Loads one ticker's daily bars from a Yahoo-format CSV.
///
/// The header must match [`CSV_HEADER`] exactly and dates must be strictly
/// increasing. Malformed cells report the 1-based line number; rows that
/// parse but violate a price invariant are data errors.
pub fn load_csv(path: &Path) -> Result<Vec<OhlcvBar>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|err| match err.kind() {
            csv::ErrorKind::Io(_) => CoreError::Data(format!("{display}: {err}")),
            _ => CoreError::Parse {
                path: display.clone(),
                line: 1,
                detail: err.to_string(),
            },
        })?;

    let header = reader.headers().map_err(|err| CoreError::Parse {
        path: display.clone(),
        line: 1,
        detail: err.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER) {
        return Err(CoreError::Parse {
            path: display,
            line: 1,
            detail: format!(
                "expected header {:?}, got {:?}",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut bars = Vec::new();
    for (index, record) in reader.records().enumerate() {
        // Header occupies line 1, so the first record is line 2.
        let line = index + 2;
        let record = record.map_err(|err| CoreError::Parse {
            path: display.clone(),
            line,
            detail: err.to_string(),
        })?;
        let bar = parse_record(&record, &display, line)?;
        bar.validate()
            .map_err(|err| CoreError::Data(format!("{display} line {line}: {err}")))?;
        if let Some(prev) = bars.last() {
            let prev: &OhlcvBar = prev;
            if bar.date <= prev.date {
                return Err(CoreError::Data(format!(
                    "{display} line {line}: dates must be strictly increasing, \
                     {} follows {}",
                    bar.date, prev.date
                )));
            }
        }
        bars.push(bar);
    }
    Ok(bars)
}

fn parse_record(record: &csv::StringRecord, path: &str, line: usize) -> Result<OhlcvBar> {
    let parse_err = |detail: String| CoreError::Parse {
        path: path.to_string(),
        line,
        detail,
    };
    if record.len() != CSV_HEADER.len() {
        return Err(parse_err(format!(
            "expected {} fields, got {}",
            CSV_HEADER.len(),
            record.len()
        )));
    }
    let field = |i: usize| record.get(i).unwrap_or_default();
    let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d")
        .map_err(|err| parse_err(format!("Date {:?}: {err}", field(0))))?;
    let mut prices = [0.0_f64; 5];
    for (slot, i) in prices.iter_mut().zip(1..=5) {
        *slot = field(i)
            .parse::<f64>()
            .map_err(|err| parse_err(format!("{} {:?}: {err}", CSV_HEADER[i], field(i))))?;
    }
    let volume = field(6)
        .parse::<u64>()
        .map_err(|err| parse_err(format!("Volume {:?}: {err}", field(6))))?;
    Ok(OhlcvBar {
        date,
        open: prices[0],
        high: prices[1],
        low: prices[2],
        close: prices[3],
        adj_close: prices[4],
        volume,
    })
}
