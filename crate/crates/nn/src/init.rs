//! Weight initializers.

use rand::Rng;

use crate::float::Float;
use crate::tensor::Tensor;

/// He/Kaiming normal for ReLU-family layers: `N(0, 2 / fan_in)`.
pub fn kaiming_normal<F: Float, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<F> {
    Tensor::randn(shape, (2.0 / fan_in.max(1) as f64).sqrt(), rng)
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual default for linear and
/// convolution layers and their biases.
pub fn fan_in_uniform<F: Float, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<F> {
    let b = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, -b, b, rng)
}
