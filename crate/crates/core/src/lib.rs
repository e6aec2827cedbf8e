//! Label-conditional ECG synthesis with a diffusion model over a
//! state-space backbone, GAN baselines, and a train-real/train-synthetic
//! evaluation harness.

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod gan;
pub mod layers;
pub mod leads;
pub mod model;
pub mod rng;
pub mod s4;

pub use error::{Error, Result};
