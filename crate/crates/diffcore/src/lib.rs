//! Reverse-mode automatic differentiation over dense CPU tensors.
//!
//! A [`Tape`] records operations on [`Var`] handles in creation order; a
//! single call to [`Tape::backward`] sweeps it in reverse and returns
//! [`Gradients`] for every bound parameter and differentiable leaf.
//! Learnable tensors live in a [`ParamStore`] and are updated by [`Adam`].
//!
//! ```
//! use diffcore::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::<f64>::new();
//! let w = store.add("w", Tensor::from_f64([2], &[3.0, -1.0]).unwrap());
//! let tape = Tape::new();
//! let x = tape.constant(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
//! let loss = tape.param(&store, w).mul(x).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.param(w).unwrap().data(), &[1.0, 2.0]);
//! ```

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod ops;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::op_set;
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use real::{gemm, Real};
pub use tape::{BackwardFn, GradSink, Gradients, Tape, Var};
pub use tensor::Tensor;
