//! Reverse-mode automatic differentiation over dense tensors, scoped to the
//! layers used by the translation networks, plus the Adam optimizer and the
//! checkpoint container.

mod adam;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod norm;
mod scalar;
mod tensor;

use thiserror::Error;

pub use adam::{set_trainable, zero_grads, AdamConfig, AdamState};
pub use conv::{conv2d, conv_transpose2d, PadMode};
pub use norm::{instance_norm, INSTANCE_NORM_EPS};
pub use scalar::Scalar;
pub use tensor::{bce_with_logits_to_const, l1_loss, mse_loss, mse_to_const, stack_images, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutogradError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("backward needs a single-element root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("checkpoint format error: {0}")]
    Format(String),
}
