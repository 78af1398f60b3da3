//! Reverse-mode automatic differentiation over f64 tensors, plus the Adam
//! optimizer and a central-difference gradient checker.

mod adam;
mod gradcheck;
mod ops;
pub mod special;
mod tensor;

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use gradcheck::gradient_check;
pub use ops::concat;
pub use tensor::{backward, grad_enabled, NoGradGuard, Tensor};

/// Ordered, named parameter list of a model, as produced by its `params()`
/// method. Order is the checkpoint and optimizer contract.
pub type NamedParams = Vec<(String, Tensor)>;
