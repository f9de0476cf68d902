//! Counter-based random streams keyed on `(seed, stream)`.
//!
//! Every consumer derives its generator from a seed and a stream key instead
//! of sharing one sequential generator, so results do not depend on the
//! order in which samples, steps or sweep entries are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type KeyedRng = ChaCha8Rng;

pub fn keyed(seed: u64, stream: u64) -> KeyedRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream-key namespaces. The low 48 bits carry a per-use counter.
pub mod stream {
    pub const INIT: u64 = 1 << 48;
    pub const STYLE: u64 = 2 << 48;
    pub const BATCH: u64 = 3 << 48;
    pub const RENDER_A: u64 = 4 << 48;
    pub const RENDER_B: u64 = 5 << 48;
    pub const CLASSIFIER: u64 = 6 << 48;
    pub const SWEEP: u64 = 7 << 48;
    pub const TRANSLATE: u64 = 8 << 48;
    pub const PAIRS: u64 = 9 << 48;
    pub const PROBE: u64 = 10 << 48;
}
