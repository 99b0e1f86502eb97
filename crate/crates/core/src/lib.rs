//! Two-stream 3D convolutional networks with a discriminative code layer.

pub mod dcl;
pub mod error;
pub mod eval;
pub mod flow;
pub mod image;
pub mod nn;
pub mod pipeline;
pub mod tensor;
pub mod trainer;
pub mod video;
pub mod viz;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
