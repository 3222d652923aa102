//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator seeded through `seed_from_u64`, and
//! Gaussian variates come from `rand_distr::StandardNormal` (ziggurat). Both
//! algorithms are fixed by their crates, so a seed pins the exact sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mix a master seed with a path of indices (splitmix64 finalizer per part)
/// so that sub-streams are independent of scheduling order.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix(master ^ 0x5DEE_CE66_D1CE_4E5B);
    for &p in parts {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| gaussian(rng)).collect()
}
