//! Reverse-mode automatic differentiation over dense tensors, MLPs with
//! skip connections, the Adam optimizer, and the cosine learning-rate
//! schedule. Double precision throughout.
//!
//! Tapes are single-owner; parameters are plain [`Tensor`]s that get
//! attached to a fresh tape each step, so snapshots stay immutable during
//! parallel evaluation and only the training loop mutates them.

mod adam;
mod checkpoint;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, cosine_lr, AdamState};
pub use checkpoint::{TensorEntry, TensorFile, MAGIC};
pub use mlp::{
    directional_derivative_check, random_direction, relative_error, Activation, LayerSpec, Mlp,
    MlpSpec,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
