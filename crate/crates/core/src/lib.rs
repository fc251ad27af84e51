//! Gradient-based meta-learning on top of `metalearn-autograd`.
//!
//! - [`nn`]: parameterized modules and graph-connected cloning
//! - [`transform`]: learnable gradient transforms and differentiable updates
//! - [`algorithms`]: MAML, ANIL, transform-based learners, hypergradient descent
//! - [`data`]: episodic task pipelines over labeled datasets
//! - [`env`]: meta-RL environments and a vectorized wrapper
//! - [`bench`]: synthetic benchmarks and the experiment runner behind the CLI
//!
//! ```
//! use metalearn::algorithms::Maml;
//! use metalearn::nn::Module;
//! use metalearn_autograd::{grad, Tensor};
//!
//! let model = Module::new("w", |m, x| Ok(x.mul(m.param("w")?)?))
//!     .with_param("w", Tensor::vector(vec![1.0]));
//! let maml = Maml::new(model, 0.1)?;
//! let mut fast = maml.clone_module();
//! let x = Tensor::vector(vec![1.0]);
//! let loss = fast.forward(&x)?.square().sum();
//! maml.adapt(&mut fast, &loss)?;
//! let query = fast.forward(&x)?.square().sum();
//! let g = grad(&query, &maml.module().parameters(), false)?;
//! assert!((g[0].item()? - 1.28).abs() < 1e-12);
//! # Ok::<(), metalearn::Error>(())
//! ```

pub mod algorithms;
pub mod batch;
pub mod bench;
pub mod data;
pub mod env;
pub mod error;
pub mod nn;
pub mod parallel;
pub mod seed;
pub mod transform;

pub use error::{Error, Result};
pub use metalearn_autograd as autograd;
