//! Plain tensor kernels with hand-written adjoints, used by the autodiff
//! layer and directly by inference paths.

pub mod broadcast;
pub mod conv;
pub mod fftconv;
pub mod norm;
pub mod pool;
