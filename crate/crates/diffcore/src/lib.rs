//! Minimal reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar result walks the record in reverse and
//! accumulates gradients into the [`ParamStore`] that owns the trainable
//! values. Layers ([`nn`]) and the [`Adam`] optimizer are built on top.
//!
//! All numeric code is generic over [`Real`], so the same model can be
//! instantiated in `f32` for training and in `f64` for finite-difference
//! checks ([`grad_check`]).
//!
//! ```
//! use diffcore::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::<f64>::new();
//! let w = store.add("w", Tensor::vector(vec![0.5, -1.0, 2.0]));
//! let mut g = Graph::new();
//! let wv = g.param(&store, w);
//! let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let loss = g.dot(wv, x).unwrap();
//! g.backward(loss, &mut store).unwrap();
//! assert_eq!(store.get(w).grad.data(), &[1.0, 2.0, 3.0]);
//! ```

mod adam;
mod error;
mod graph;
mod gradcheck;
pub mod init;
pub mod nn;
mod param;
mod real;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig};
pub use error::DiffError;
pub use gradcheck::{grad_check, FnObjective, GradCheckReport, Objective};
pub use graph::{Graph, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;

pub type Result<T, E = DiffError> = std::result::Result<T, E>;
