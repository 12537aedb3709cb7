//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose key is
//! the user seed and whose stream id is a hash of a small tuple of indices
//! (time step, particle, purpose, ...). Results are therefore independent of
//! the order in which particles or time steps are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags that separate otherwise identical index tuples.
pub mod purpose {
    pub const SIMULATE: u64 = 1;
    pub const PROPOSE: u64 = 2;
    pub const RESAMPLE: u64 = 3;
    pub const VERIFY: u64 = 4;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the stream identified by `ids` under `seed`.
pub fn stream(seed: u64, ids: &[u64]) -> StreamRng {
    let mut key = [0u8; 32];
    for (k, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(
            &splitmix(seed ^ (k as u64).wrapping_mul(0xa076_1d64_78bd_642f)).to_le_bytes(),
        );
    }
    let mut id = 0x243f_6a88_85a3_08d3u64;
    for &x in ids {
        id = splitmix(id ^ x);
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(id);
    rng
}
