//! Deterministic random substreams.
//!
//! A step that samples K independent blocks takes one `u64` from the driver's
//! generator and gives block `k` its own ChaCha stream `k` under that key.
//! The output of a block therefore depends only on the key and `k`, never on
//! the order or thread in which blocks run.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

pub type StreamRng = ChaCha8Rng;

/// Generator for block `stream` under `key`.
pub fn substream(key: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng
}

/// Draws the key for the next step from the driver's generator.
pub fn next_key<R: RngCore + ?Sized>(rng: &mut R) -> u64 {
    rng.next_u64()
}

#[inline]
pub fn std_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}
