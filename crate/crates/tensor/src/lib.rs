//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! The backward pass emits ordinary tape ops, so gradients are themselves
//! differentiable (double backward). A fixed seed yields bit-identical
//! forward and backward results on repeated runs; there is no nondeterminism
//! in any kernel.

pub mod container;
pub mod conv;
mod error;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
mod tape;
mod tensor;

pub use conv::{conv2d, conv2d_transposed, conv_out_extent, tconv_out_extent};
pub use error::{Result, TensorError};
pub use tape::Tape;
pub use tensor::{concat_channels, grad, grad_quiet, GridTensor};
