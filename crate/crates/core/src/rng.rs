//! Deterministic per-run random streams.
//!
//! Run `r` of an experiment with master seed `s` draws from ChaCha12 keyed by
//! `s` on stream `r`. ChaCha is counter-based, so the streams are independent
//! and the output of a run never depends on how runs are scheduled across
//! threads. Normal variates use `rand_distr::StandardNormal` (ziggurat).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub type RunRng = ChaCha12Rng;

pub fn run_stream(master_seed: u64, run_index: u64) -> RunRng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(run_index);
    rng
}

pub fn standard_normal(rng: &mut RunRng) -> f64 {
    rng.sample(StandardNormal)
}
