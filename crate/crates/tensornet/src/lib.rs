//! Dense `f64` tensors with a tape for reverse-mode differentiation.
//!
//! Every operation is recorded on a [`Tape`] as it executes. Calling
//! [`Tape::backward`] on a scalar walks the tape in reverse and fills the
//! gradient slot of every tensor that requires one.
//!
//! ```
//! use tensornet::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::from_vec(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
//! ```

mod adam;
mod error;
mod gemm;
pub mod gradcheck;
pub mod io;
mod ops;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};
pub use ops::norm::{BatchNormState, NormMode};
pub use ops::pairs::PairInput;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
