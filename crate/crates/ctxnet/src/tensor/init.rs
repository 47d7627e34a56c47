//! Seeded weight initialization.

use super::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)). Samples are drawn in f64 so the
/// stream is identical regardless of the storage type.
pub fn glorot_uniform<E: Scalar>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<E> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).unwrap()
}
