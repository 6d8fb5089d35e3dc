//! Deterministic RNG stream derivation.
//!
//! Every random decision in the simulator draws from a stream derived from
//! the run seed plus a purpose tag and indices. Streams are independent of
//! evaluation order, so per-sample work can be resequenced (or sharded)
//! without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep unrelated streams from colliding.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Dataset,
    ModelInit,
    Shuffle { epoch: u64 },
    Augment { step: u64, slot: u64 },
    GradCheck,
}

fn splitmix(mut state: u64) -> u64 {
    state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x51_7c_c1_b7_27_22_0a_95u64;
    for &p in parts {
        acc = splitmix(acc ^ p);
    }
    acc
}

/// Derive an independent ChaCha stream for `(seed, stream)`.
pub fn derive(seed: u64, stream: Stream) -> ChaCha8Rng {
    let tagged = match stream {
        Stream::Dataset => mix(&[seed, 1]),
        Stream::ModelInit => mix(&[seed, 2]),
        Stream::Shuffle { epoch } => mix(&[seed, 3, epoch]),
        Stream::Augment { step, slot } => mix(&[seed, 4, step, slot]),
        Stream::GradCheck => mix(&[seed, 5]),
    };
    ChaCha8Rng::seed_from_u64(tagged)
}
