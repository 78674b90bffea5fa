//! Dense `f64` tensors with tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Calling
//! [`Var::backward`] on a scalar result walks the tape in reverse and
//! accumulates gradients into the leaves created with [`Tape::param`].
//!
//! ```
//! use tridet_autograd::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(&Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
//! let loss = x.mul(x).unwrap().sum();
//! loss.backward().unwrap();
//! assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0, 6.0, 8.0]);
//! ```

pub mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use ops::WindowDirection;
pub use tape::{NodeId, Tape, Var};
pub use tensor::{Result, Tensor, TensorError};

/// Value placed in bin-window positions that fall outside the sequence.
pub const MASKED_LOGIT: f64 = -1e9;
/// Floor on normalization denominators.
pub const NORM_EPS: f64 = 1e-8;
