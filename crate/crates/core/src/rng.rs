//! Seed derivation for reproducible, scheduling-independent simulation.
//!
//! Every random quantity in a run descends from one master seed through a
//! counter scheme: each level of the hierarchy (scenario, gamma, iteration,
//! cohort role, variable) is folded into the parent seed with a SplitMix64
//! finalizer. Within a cohort each simulated variable owns a ChaCha8 stream,
//! so the i-th row always consumes the i-th draws of each stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of counters into `seed`.
pub fn derive_seed(seed: u64, counters: &[u64]) -> u64 {
    counters
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019))))
}

/// Seed of one (scenario, gamma, iteration) work unit.
pub fn iteration_seed(master: u64, scenario_index: usize, gamma_index: usize, iteration: usize) -> u64 {
    derive_seed(
        master,
        &[scenario_index as u64, gamma_index as u64, iteration as u64],
    )
}

/// Which cohort of an iteration a seed is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CohortRole {
    Development = 0,
    TestMixed = 1,
    TestWithheld = 2,
}

pub fn cohort_seed(iteration_seed: u64, role: CohortRole) -> u64 {
    derive_seed(iteration_seed, &[0xC0, role as u64])
}

/// Independent ChaCha8 stream `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
