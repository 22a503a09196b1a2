//! Parameter initialization schemes.

use rand_core::RngCore;

use crate::{Real, Tensor};

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn uniform01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw (Box-Muller, one value per call).
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - uniform01(rng);
    let u2 = uniform01(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Glorot/Xavier uniform in `±sqrt(6 / (fan_in + fan_out))`, shape `[fan_in, fan_out]`.
pub fn xavier_uniform<T: Real, R: RngCore + ?Sized>(
    rng: &mut R,
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::from_f64((2.0 * uniform01(rng) - 1.0) * bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape")
}

pub fn normal<T: Real, R: RngCore + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(std * standard_normal(rng)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}
