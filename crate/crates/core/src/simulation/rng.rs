//! Reproducible random streams.
//!
//! All randomness comes from ChaCha20 (`rand_chacha`), whose output is fixed
//! across platforms. A replication's stream is keyed by the master seed and a
//! cell identifier, and selected by the replication counter, so any cell or
//! replication can be regenerated on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// SplitMix64 finaliser, used to spread seeds and identifiers.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for replication `rep` of cell `cell` under `master`.
pub fn replication_rng(master: u64, cell: u64, rep: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(mix64(master ^ mix64(cell)));
    rng.set_stream(rep);
    rng
}

/// A 64-bit seed derived from `(master, cell, rep, salt)`, for consumers
/// that take a plain seed.
pub fn derived_seed(master: u64, cell: u64, rep: u64, salt: u64) -> u64 {
    mix64(mix64(master ^ mix64(cell)) ^ mix64(rep.wrapping_add(mix64(salt))))
}
