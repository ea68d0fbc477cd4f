//! Dense `f64` tensors with reverse-mode differentiation and Adam.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, grad_check_store, FD_STEP};
pub use params::{Binding, ParamGrads, ParamId, ParamStore, Parameter, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tape::{Axis, Gradients, Tape, Var};
pub(crate) use tape::{softplus_inverse, softplus_unit};
pub use tensor::Tensor;
