//! Seeded randomness. All Monte Carlo entry points take explicit seeds and
//! derive their streams from ChaCha so results are platform independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-stream for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = rng.sample(StandardNormal);
    T::lit(z)
}

pub fn standard_normal_vec<T: Scalar, R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<T> {
    (0..dim).map(|_| standard_normal(rng)).collect()
}

/// Draws an index from unnormalized nonnegative weights.
pub fn categorical<T: Scalar, R: Rng + ?Sized>(rng: &mut R, weights: &[T]) -> usize {
    let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w.as_f64();
        if u < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}
