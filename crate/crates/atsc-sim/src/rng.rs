//! Named, seeded random streams.
//!
//! Every source of randomness in a run is a separate ChaCha8 stream derived
//! from `(master seed, stream name)`. Streams never share state, so adding a
//! consumer (or replaying only part of a run) cannot shift the draws seen by
//! any other consumer. Per-episode streams (`"arrivals.ep3"`, …) make runs
//! resumable at episode boundaries without serializing generator state: the
//! stream for episode k is a pure function of the master seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a hash of a byte string.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer, used to spread the combined seed/name hash.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the stream named `name` under `master`.
///
/// The 256-bit ChaCha key is generated by iterating SplitMix64 from a mix of
/// the master seed and the FNV-1a hash of the name, so distinct names give
/// statistically independent streams and the mapping is stable across runs
/// and platforms.
pub fn stream(master: u64, name: &str) -> ChaCha8Rng {
    let mut x = master ^ fnv1a(name.as_bytes());
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        x = splitmix64(x);
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Derives the per-episode stream `"{purpose}.ep{episode}"`.
pub fn episode_stream(master: u64, purpose: &str, episode: u64) -> ChaCha8Rng {
    stream(master, &format!("{purpose}.ep{episode}"))
}
