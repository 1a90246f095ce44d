//! Seed plumbing for reproducible Monte Carlo runs.
//!
//! Every particle gets its own counter-mode stream keyed by the master seed,
//! so an estimate depends only on (seed, particle index) and never on how
//! particles are scheduled across threads or batches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for one particle. Distinct particle indices select independent
/// ChaCha streams under the same key.
pub fn particle_rng(master_seed: u64, particle: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(particle);
    rng
}

/// Stable sub-seed for a named purpose (planner sampling, one bisection
/// iteration, ...) so that different consumers never share particle streams.
/// Splitmix64 finalizer; good dispersion even for small domain values.
pub fn derive_seed(master_seed: u64, domain: u64) -> u64 {
    let mut z = master_seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
