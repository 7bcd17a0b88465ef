//! Dense `f64` tensors with reverse-mode automatic differentiation.

mod params;
mod tape;
mod tensor;

pub use params::{Param, ParamGrads, ParamId, ParamStore};
pub use tape::{sigmoid, softmax_values, Elementwise, Gradients, Tape, Var};
pub use tensor::Tensor;
