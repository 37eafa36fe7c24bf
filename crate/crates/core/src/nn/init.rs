use alloc::vec::Vec;

use rand::Rng;

use super::Tensor;
use crate::math::{self, Real};

/// Glorot/Xavier uniform initialization, `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::from_f64(rng.gen_range(-limit..limit))).collect();
    Tensor::from_vec(shape, data).expect("shape matches generated length")
}
