//! Seeded randomness. Every stochastic step in the crate draws from a
//! [`ChaCha8Rng`] derived from a single experiment seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for round `t`: sub-seed `seed + t`.
pub fn for_round(seed: u64, round: usize) -> SimRng {
    seeded(seed.wrapping_add(round as u64))
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, d: usize, sigma: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

/// Uniform point on the unit sphere in `d` dimensions.
pub fn unit_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, d, 1.0);
        if let Some(u) = crate::linalg::normalized(&v, 1e-12) {
            return u;
        }
    }
}
