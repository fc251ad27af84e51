//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Any gradient can itself be made differentiable by passing
//! `create_graph = true` to [`grad`], which is what gradient-based
//! meta-learning needs to differentiate through an optimization step.
//!
//! ```
//! use metalearn_autograd::{grad, Tensor};
//!
//! let x = Tensor::parameter(vec![3.0], &[1]).unwrap();
//! let dx = grad(&x.square().sum(), &[x.clone()], true).unwrap();
//! assert_eq!(dx[0].data(), &[6.0]);
//! let ddx = grad(&dx[0].sum(), &[x], false).unwrap();
//! assert_eq!(ddx[0].data(), &[2.0]);
//! ```

mod backward;
mod error;
pub mod loss;
mod ops;
mod tensor;

pub use backward::grad;
pub use error::{Result, TensorError};
pub use tensor::Tensor;
