//! Seeded parameter initialization.
//!
//! Weights draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` — for recurrent
//! matrices the fan-in is the hidden size — and biases start at zero, so a
//! fresh model is completely determined by its seed and construction order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::tensor::{Element, Tensor};

/// Draws a tensor of the given shape with uniform fan-in scaling.
pub fn uniform_fan_in<E: Element>(
    rng: &mut ChaCha8Rng,
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
) -> Tensor<E> {
    let shape = shape.into();
    let len: usize = shape.iter().product();
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..len)
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data)
}
