//! Score-based graph generation with an edgewise dense prediction GNN.
//!
//! The numerical core is generic over the scalar type; the aliases below fix
//! it to double precision, which training and sampling use.

pub mod autograd;
pub mod dsm;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod sampler;
mod scalar;
pub mod tasks;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor = autograd::Tensor<f64>;
pub type Tape = autograd::Tape<f64>;
pub type ParamStore = autograd::ParamStore<f64>;
pub type EdpGnn = model::EdpGnn<f64>;
