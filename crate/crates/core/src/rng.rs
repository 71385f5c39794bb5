//! Counter-based random streams: stream `index` of `seed` is the same
//! sequence no matter which thread draws it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `index` under the experiment seed `seed`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream for a named sub-experiment; keeps e.g. pilot and production walks
/// from sharing draws under one seed.
pub fn substream(seed: u64, domain: u64, index: u64) -> StreamRng {
    let mixed = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    stream(mixed, index)
}
