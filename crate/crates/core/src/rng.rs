//! Reproducible per-path random streams.
//!
//! Each path owns an independent ChaCha8 stream selected by its index under a
//! shared key derived from the master seed, so paths can be generated in any
//! order or on any number of workers without changing their values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

/// Stream for path `path_id` under `master_seed`.
pub fn path_stream(master_seed: u64, path_id: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_id);
    rng
}

/// Stream reserved for auxiliary draws that are not tied to a path.
pub fn aux_stream(master_seed: u64, tag: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(tag);
    rng
}
