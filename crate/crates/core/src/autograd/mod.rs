//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
pub mod check;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
