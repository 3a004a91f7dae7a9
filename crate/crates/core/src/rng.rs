//! Counter-derived random streams.
//!
//! Every stochastic draw in the crate is taken from a ChaCha8 stream selected
//! by `(seed, domain, a, b)`. A pixel's counts therefore depend only on the
//! run seed and the pixel/frame indices, never on scheduling order, so
//! parallel loops reproduce sequential output bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub type StreamRng = ChaCha8Rng;

/// Stream domains. Keep values stable: changing one changes every output
/// that depends on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    PixelCounts = 1,
    StrayLed = 2,
    Fibers = 3,
    Bell = 4,
    SsnSweep = 5,
    Bootstrap = 6,
    Synthetic = 7,
    SourceComparison = 8,
    Analyzer = 9,
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a domain tag and two indices into a 64-bit stream id.
pub fn stream_id(domain: Domain, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(domain as u64) ^ a) ^ b.rotate_left(17))
}

/// Returns the independent stream for `(seed, domain, a, b)`.
pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(domain, a, b));
    rng
}

/// A run seed for a sub-acquisition, so that repeated scans of one
/// experiment draw independent noise.
pub fn derive_seed(seed: u64, domain: Domain, a: u64, b: u64) -> u64 {
    stream(seed, domain, a, b).random()
}

/// Poisson draw that accepts a zero mean.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    debug_assert!(mean.is_finite() && mean >= 0.0, "poisson mean {mean}");
    if mean <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(mean)
        .expect("finite positive Poisson mean")
        .sample(rng);
    draw as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, Domain::PixelCounts, 3, 0).random()).collect();
        let mut r1 = stream(7, Domain::PixelCounts, 3, 0);
        let mut r2 = stream(7, Domain::PixelCounts, 3, 0);
        let mut r3 = stream(7, Domain::PixelCounts, 4, 0);
        let x1: u64 = r1.random();
        assert_eq!(x1, r2.random::<u64>());
        assert_ne!(x1, r3.random::<u64>());
        assert!(a.iter().all(|&v| v == a[0]));
    }

    #[test]
    fn zero_mean_poisson_is_zero() {
        let mut r = stream(0, Domain::Synthetic, 0, 0);
        assert_eq!(poisson(&mut r, 0.0), 0);
    }

    #[test]
    fn large_mean_poisson_is_close() {
        let mut r = stream(1, Domain::Synthetic, 0, 0);
        let n = 2000;
        let mean = (0..n).map(|_| poisson(&mut r, 1.0e8) as f64).sum::<f64>() / n as f64;
        assert!((mean / 1.0e8 - 1.0).abs() < 1e-4);
    }
}
