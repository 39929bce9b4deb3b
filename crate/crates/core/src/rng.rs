//! Seeded random streams. Every stochastic step draws from its own ChaCha
//! stream so that adding randomness in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod stream {
    pub const FOLDS: u64 = 1;
    pub const KMEANS: u64 = 2;
    pub const INIT: u64 = 3;
    pub const MASK: u64 = 4;
    pub const HOLDOUT: u64 = 5;
    pub const CLASSIFIER_INIT: u64 = 6;
    pub const SYNTH: u64 = 7;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
