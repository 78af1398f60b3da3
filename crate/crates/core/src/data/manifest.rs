//! Dataset manifest: which CSV belongs to which ticker, and the split dates.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::bars::load_csv;
use crate::data::panel::AlignedPanel;
use crate::error::{CoreError, Result};

/// One ticker's symbol and CSV location. Relative paths are resolved
/// against the manifest's own directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TickerEntry {
    pub symbol: String,
    pub path: PathBuf,
}

/// JSON manifest describing a dataset: ordered tickers plus inclusive
/// train/test calendar ranges.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetManifest {
    pub tickers: Vec<TickerEntry>,
    #[serde(default = "default_train_start")]
    pub train_start: NaiveDate,
    #[serde(default = "default_train_end")]
    pub train_end: NaiveDate,
    #[serde(default = "default_test_start")]
    pub test_start: NaiveDate,
    #[serde(default = "default_test_end")]
    pub test_end: NaiveDate,
}

fn default_train_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2009, 1, 1).expect("valid date")
}

fn default_train_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date")
}

fn default_test_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 2).expect("valid date")
}

fn default_test_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date")
}

impl DatasetManifest {
    /// Reads and validates a manifest from a JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let text = fs::read_to_string(path)
            .map_err(|err| CoreError::Data(format!("{display}: {err}")))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|err| CoreError::Parse {
                path: display,
                line: err.line(),
                detail: err.to_string(),
            })?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// Serializes to pretty JSON at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self)
            .map_err(|err| CoreError::Data(format!("manifest serialization: {err}")))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.tickers.is_empty() {
            return Err(CoreError::Data("manifest lists no tickers".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for entry in &self.tickers {
            if entry.symbol.is_empty() {
                return Err(CoreError::Data("manifest has an empty ticker symbol".into()));
            }
            if !seen.insert(entry.symbol.as_str()) {
                return Err(CoreError::Data(format!(
                    "manifest lists ticker {} twice",
                    entry.symbol
                )));
            }
        }
        if self.train_start > self.train_end {
            return Err(CoreError::Data(format!(
                "train range {}..{} is inverted",
                self.train_start, self.train_end
            )));
        }
        if self.test_start > self.test_end {
            return Err(CoreError::Data(format!(
                "test range {}..{} is inverted",
                self.test_start, self.test_end
            )));
        }
        Ok(())
    }

    /// Loads every ticker CSV (relative paths resolved against `base_dir`)
    /// and aligns them into a panel, preserving manifest order.
    pub fn load_panel(&self, base_dir: &Path) -> Result<AlignedPanel> {
        self.validate()?;
        let mut per_ticker = Vec::with_capacity(self.tickers.len());
        for entry in &self.tickers {
            let path = if entry.path.is_absolute() {
                entry.path.clone()
            } else {
                base_dir.join(&entry.path)
            };
            per_ticker.push((entry.symbol.clone(), load_csv(&path)?));
        }
        AlignedPanel::align(&per_ticker)
    }
}
