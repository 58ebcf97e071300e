//! Seeded random streams. Every consumer derives its own named substream
//! from the experiment seed, and every particle owns an independent stream
//! inside it, so thread scheduling never changes the draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the named substream of `seed`.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    name.bytes()
        .fold(splitmix64(seed), |acc, b| splitmix64(acc ^ u64::from(b)))
}

/// Generator for the named substream.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, name))
}

/// Generator for one particle inside a named substream.
pub fn particle_stream(seed: u64, name: &str, particle: usize) -> ChaCha8Rng {
    let mut rng = substream(seed, name);
    rng.set_stream(particle as u64);
    rng
}
