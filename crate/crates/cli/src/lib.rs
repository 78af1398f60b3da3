//! Command-line frontend over the trading engine: dataset synthesis,
//! training runs, backtests, and xLSTM-vs-LSTM comparison, all seeded and
//! reproducible.

mod cli;
mod config;
mod run;

pub use cli::{run, BacktestArgs, Cli, Command, CompareArgs, ConfigArgs, SynthArgs, TrainArgs};
pub use config::{ModelKind, RunConfig, TrainOverrides};
pub use run::{
    cmd_backtest, cmd_compare, cmd_synth, cmd_train, preset_batch_size, CompareReport,
    CompareRow, Prepared, SynthSpec,
};

use xtrader_core::CoreError;

/// Process exit code for a failed run: 2 usage/config, 3 data, 4 numeric,
/// 5 checkpoint.
pub fn exit_code(err: &CoreError) -> u8 {
    match err {
        CoreError::Contract { .. } | CoreError::Dimension { .. } => 2,
        CoreError::Parse { .. } | CoreError::Data(_) | CoreError::Io(_) => 3,
        CoreError::Numeric { .. } | CoreError::Domain { .. } => 4,
        CoreError::Checkpoint(_) => 5,
    }
}
