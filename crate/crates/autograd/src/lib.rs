//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] records one forward pass. Operations are methods on [`Var`]
//! handles and each registers its own reverse rule. Parameters live outside
//! the graph in a [`ParamStore`] and are bound onto a fresh graph every step,
//! so models stay plain data between steps and can be shared across threads.
//!
//! ```
//! use choreo_autograd::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
//! let loss = x.sqr().sum();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod adam;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod ops;
mod params;
mod real;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};
pub use gradcheck::{gradient_check, gradient_check_params, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::Padding;
pub use params::{Bound, GradMap, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
