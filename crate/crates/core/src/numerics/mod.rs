//! Dense tensors, reverse-mode differentiation and the ADAM optimizer.

mod adam;
mod gradcheck;
mod kernels;
mod param;
mod tape;
mod tensor;

pub use adam::{AdamState, Decay};
pub use gradcheck::finite_difference_check;
pub use param::{Bound, DiffTensor, ParamEntry, ParamId, ParamRole, ParamStore};
pub use tape::{BatchNormMode, BatchStats, CustomBackward, Gradients, Tape, Var};
pub use tensor::Tensor;
