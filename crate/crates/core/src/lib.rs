//! Deterministic engine for training and backtesting a recurrent
//! actor-critic trading agent.
//!
//! The crate is organized bottom-up:
//! - [`autodiff`]: reverse-mode tensors, Adam, gradient checking;
//! - [`checkpoint`]: binary serialization of named parameters.
//!
//! All numerics are f64 and all randomness flows from explicit seeds, so
//! a fixed (seed, config, data) triple reproduces bit-identical results.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod env;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod ppo;
pub mod xlstm;

pub use error::{CoreError, Result};
