//! Deterministic stream-keyed random number generation.
//!
//! Every random draw in the crate comes from a ChaCha12 generator keyed by a
//! (master seed, stream id) pair, so instance generation and field draws are
//! reproducible and independent of execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Generator for stream `stream` under `master` seed.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// splitmix64 finalizer; used to derive child seeds from a master seed.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
