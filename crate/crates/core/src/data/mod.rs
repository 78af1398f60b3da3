//! Market data: CSV ingestion, date alignment, observation features,
//! turbulence, dataset manifests, and synthetic data for tests.

mod bars;
mod manifest;
mod panel;
mod synth;
mod turbulence;

pub use bars::{load_csv, OhlcvBar, CSV_HEADER};
pub use manifest::{DatasetManifest, TickerEntry};
pub use panel::{AlignedPanel, FEATURES_PER_TICKER};
pub use synth::{generate_bars, write_csv, SynthConfig};
pub use turbulence::{
    mahalanobis, nearest_rank_percentile, TurbulenceSeries, TRAILING_WINDOW,
};
