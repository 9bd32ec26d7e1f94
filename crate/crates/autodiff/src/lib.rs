//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass and evaluates
//! it eagerly. Calling [`Graph::backward`] on a single-element output fills
//! the gradient of every node reachable from a `requires_grad` leaf. The
//! op set is the one needed by convolutional image models: same-padded
//! 2-d convolution (with differentiable kernels), depthwise 3x3 filtering,
//! dense layers, instance normalization, softmax, reductions and
//! elementwise arithmetic.
//!
//! ```
//! use ncam_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::new(&[2], vec![3.0, -1.0]).unwrap());
//! let y = g.mul(x, x).unwrap();
//! let loss = g.sum(y);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0, -2.0]);
//! ```

mod conv;
mod elementwise;
mod error;
pub mod gradcheck;
mod graph;
mod linear;
mod norm;
mod real;
mod shape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{GradCheck, GradCheckReport};
pub use graph::{Graph, Var};
pub use real::Real;
pub use tensor::Tensor;
