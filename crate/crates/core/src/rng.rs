//! Seeded generators. Every random draw in the crate goes through an
//! explicitly seeded ChaCha stream so runs replay bit-exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn seeded(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Named stream ids so different consumers never share draws.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const MASKING: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const SAMPLING: u64 = 5;
    pub const SYNTH: u64 = 6;
}

/// Stream `stream` specialised to item `index`, for per-example generators
/// that must not depend on processing order.
pub fn per_item(seed: u64, stream: u64, index: u64) -> SeededRng {
    seeded(seed, stream.wrapping_add((index.wrapping_add(1)) << 16))
}
