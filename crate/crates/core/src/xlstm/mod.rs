//! Recurrent cells with stabilized exponential gating — a scalar-memory
//! variant with memory mixing and a matrix-memory variant with a covariance
//! update — plus a conventional LSTM baseline, all hosted in a shared
//! pre-norm residual block stack.

pub(crate) mod init;
pub mod lstm;
pub mod mlstm;
pub mod slstm;
mod stack;

pub use lstm::{Lstm, LstmState};
pub use mlstm::{MLstm, MLstmState};
pub use slstm::{SLstm, SLstmState};
pub use stack::{BlockStack, BlockStackConfig, Cell, CellKind, CellState};
