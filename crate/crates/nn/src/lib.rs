//! Minimal tensor library with reverse-mode autodiff.
//!
//! Tensors are dense row-major arrays of `f32` or `f64`. A [`Tape`] records
//! operations on [`Var`]s; [`Tape::backward`] returns gradients for every
//! tracked leaf and bound parameter. Heavy kernels (convolution, FFT
//! convolution) split work across threads through [`par`], which falls back
//! to plain loops when the `parallel` feature is off.

pub mod error;
pub mod float;
pub mod gradcheck;
pub mod init;
pub mod kernels;
pub mod ops;
pub mod optim;
pub mod par;
pub mod params;
pub mod tape;
pub mod tensor;

pub use error::{NnError, Result};
pub use float::Float;
pub use kernels::conv::Conv1dGeom;
pub use kernels::norm::NormAxes;
pub use kernels::pool::PoolGeom;
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Grads, Tape, Var};
pub use realfft::num_complex::Complex;
pub use tensor::Tensor;
