//! Deterministic, splittable random-number plumbing.
//!
//! Every stochastic routine in the crate draws from a ChaCha8 stream keyed
//! by a (seed, stream) pair: path simulators use one stream per path,
//! training uses one stream per iteration. Streams are independent of
//! scheduling, so batch results are bit-identical for a fixed seed no
//! matter how many threads run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::{r64, Real};

/// SplitMix64 output function: the `stream`-th value of the sequence seeded
/// by `base`. Used to derive independent sub-seeds (per case, per iteration).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for one simulated path: ChaCha8 keyed by `seed` with the path index
/// as the stream id.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// One standard-normal draw, generated in double precision and converted.
#[inline]
pub fn standard_normal<R: Real>(rng: &mut ChaCha8Rng) -> R {
    r64(rng.sample::<f64, _>(StandardNormal))
}
