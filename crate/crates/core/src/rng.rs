//! Counter-based seed derivation so every draw depends only on its coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the coordinates into a single 64-bit seed.
pub fn derive_seed(seed: u64, episode: u64, step: u64, stream: u64) -> u64 {
    [episode, step, stream]
        .iter()
        .fold(splitmix64(seed), |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

/// Generator for one `(seed, episode, step, stream)` coordinate.
pub fn stream_rng(seed: u64, episode: u64, step: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, episode, step, stream))
}
