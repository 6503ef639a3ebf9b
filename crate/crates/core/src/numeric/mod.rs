//! Dense tensors, primitive ops with backward rules, parameters, Adam and
//! finite-difference checking.

mod adam;
mod gradcheck;
pub mod ops;
mod param;
mod tensor;

pub use adam::{adam_step, adam_update, AdamConfig};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckConfig, GradCheckReport};
pub use param::{GradSet, ParamId, Parameter, ParameterStore};
pub use tensor::Tensor;
