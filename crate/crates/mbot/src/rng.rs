//! Counter-based random streams.
//!
//! Every stochastic routine in this crate derives its randomness from a
//! `(seed, stream)` pair, so draw `t` of any sequence is a pure function of
//! the seed and the counter. Parallel execution can therefore never change
//! a result: each draw owns an independent stream and reductions happen in
//! draw order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for stream index `stream` under `seed`. Streams are mutually
/// independent for a fixed seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed, used to split the stream space hierarchically
/// (e.g. one child per gradient-flow step, each with its own draw streams).
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the combined state
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
