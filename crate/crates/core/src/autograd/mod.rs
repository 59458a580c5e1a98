//! A small tape-based reverse-mode autodiff engine over dense row-major
//! tensors, sized for the toy focus network.
//!
//! Values are generic over [`Scalar`]: training runs in `f32`, gradient
//! checks run the very same code in `f64`.

mod adam;
pub mod checkpoint;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use graph::{ConvSpec, Graph, Var};
pub use params::ParamStore;
pub use tensor::{Scalar, Tensor};
