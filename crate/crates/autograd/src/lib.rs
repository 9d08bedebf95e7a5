//! Reverse-mode automatic differentiation for small convolutional networks.
//!
//! The engine is a flat tape ([`Graph`]) of dense NCHW tensors. It covers the
//! operations needed by U-Net style translators and convolutional critics:
//! strided convolutions, pooling, nearest upsampling, channel concatenation,
//! fully connected layers, and the usual GAN objectives. Every operation is
//! generic over [`Scalar`], so the exact same graph can be evaluated in `f64`
//! for finite-difference checks.

mod graph;
pub mod kernels;
mod optim;
mod scalar;
mod tensor;

pub use graph::{softmax_f64, Gradients, Graph, Var, LOG_EPS};
pub use optim::Adam;
pub use scalar::Scalar;
pub use tensor::Tensor;
