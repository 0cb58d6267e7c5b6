//! Dense `f64` tensors with a tape-based reverse-mode differentiation engine.
//!
//! Values live on a [`Graph`]; parameters live in a [`ParameterStore`] and are
//! bound onto a graph by name for each forward pass.

mod error;
mod gradcheck;
mod graph;
mod kernels;
pub mod nn;
mod params;
mod shape;
mod tensor;

pub use error::{NumericError, Result};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use params::{read_header, read_u32, read_u64, ParameterStore, PARAM_FORMAT_VERSION, PARAM_MAGIC};
pub use shape::{Shape, MAX_RANK};
pub use tensor::Tensor;
