//! Seeded, platform-independent randomness.
//!
//! Every random object in a model (embedding rows, projection rows, synthetic
//! corpora) is drawn from a ChaCha20 stream addressed by `(seed, domain,
//! index)`. Rows use their row number as the ChaCha stream id, so a row can be
//! regenerated on its own and a table never depends on how many rows were
//! requested or on how many threads built it.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Identifier of the generator recorded in model files. Bump when the
/// derivation below changes in a way that alters generated values.
pub const RNG_ALGORITHM_ID: u64 = 1;
pub const RNG_ALGORITHM_NAME: &str = "chacha20-stream-v1";

/// Independent consumers of a model seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Embedding = 1,
    KeyProjection = 2,
    SequenceProjection = 3,
    Corpus = 4,
    PairSampling = 5,
    Experiment = 6,
    Evaluation = 7,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of one consumer (`domain`, `index`) from a user seed.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    mix(mix(seed ^ mix(domain as u64)) ^ index)
}

/// Generator for `(seed, domain, index)`, positioned at ChaCha stream `stream`.
pub fn stream_rng(seed: u64, domain: Domain, index: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, domain, index));
    rng.set_stream(stream);
    rng
}

/// Plain seeded generator for sequential consumers (corpus generators,
/// samplers).
pub fn seeded(seed: u64, domain: Domain, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(seed, domain, index))
}

/// Fills `out` with i.i.d. standard normal draws from row `row` of
/// `(seed, domain, index)`, scaled by `std`.
pub fn gaussian_row(seed: u64, domain: Domain, index: u64, row: u64, std: f64, out: &mut [f64]) {
    let mut rng = stream_rng(seed, domain, index, row);
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = z * std;
    }
}
