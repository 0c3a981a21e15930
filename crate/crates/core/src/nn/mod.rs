//! Small dense networks with exact reverse-mode gradients, Adam, and
//! finite-difference checking.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod layer;
mod network;

pub use adam::{adam_step, clip_global_norm, AdamState, LrSchedule, DEFAULT_CLIP_NORM};
pub use gradcheck::{finite_difference_check, grad_check, relative_error, GradCheck};
pub use layer::{Activation, DenseLayer};
pub use network::{Gradients, LayerGrad, Mlp, Tape};
