//! Deterministic per-run random streams.
//!
//! Every run derives its generator from one master seed and its own run
//! index: `ChaCha8Rng::seed_from_u64(master)` followed by
//! `set_stream(index)`. Streams are independent, so run `i` is reproducible
//! on its own without replaying runs `0..i`, and results do not depend on
//! how runs are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_rng(master_seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run_index);
    rng
}
