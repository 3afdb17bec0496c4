//! Seeded, splittable randomness.
//!
//! Every random stream in the crate is a ChaCha20 generator keyed by a
//! 64-bit seed and addressed by a stream index, so sample `i` of a dataset
//! can be regenerated without touching samples `0..i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::C64;

pub(crate) fn stream(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Circularly-symmetric complex Gaussian with the given variance.
pub(crate) fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}
