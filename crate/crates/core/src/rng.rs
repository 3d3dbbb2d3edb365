//! Seeded random streams.
//!
//! Every random consumer draws from its own ChaCha stream of the user seed, so
//! adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod stream {
    pub const ENDMEMBERS: u64 = 1;
    pub const ABUNDANCE: u64 = 2;
    pub const TRANSITION: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const VCA: u64 = 5;
    pub const INIT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const MULTISTART: u64 = 8;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
