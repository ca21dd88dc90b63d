//! Seeded RNG substreams.
//!
//! Every source of randomness in the pipeline derives from one root seed
//! through named substreams, so that `substream(seed, "fold")` and
//! `substream(seed, "init")` are statistically independent and a run is
//! reproducible end to end. Per-case streams additionally mix in the case id,
//! which makes case-parallel and serial generation produce identical output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over a byte string, used as a stable stream-label hash.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(seed: u64, label_hash: u64) -> u64 {
    // splitmix64 finalizer over the xor of root seed and label hash
    let mut z = seed ^ label_hash.rotate_left(32);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for the named substream of a root seed.
pub fn substream(root_seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(root_seed, fnv1a(name.as_bytes())))
}

/// Deterministic RNG for one case inside a named substream.
pub fn case_stream(root_seed: u64, name: &str, case_id: &str) -> ChaCha8Rng {
    let label = fnv1a(name.as_bytes()) ^ fnv1a(case_id.as_bytes()).rotate_left(17);
    ChaCha8Rng::seed_from_u64(mix(root_seed, label))
}

/// Plain seeded RNG (used where a raw `u64` seed is part of an API contract).
pub fn from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derived `u64` seed for a named child stage (e.g. one fold of a run).
pub fn derive_seed(root_seed: u64, name: &str) -> u64 {
    mix(root_seed, fnv1a(name.as_bytes()))
}
