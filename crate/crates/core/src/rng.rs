use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based generator: `seed` names the experiment, `stream` the
/// replication (or sub-task). Distinct streams never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for one replication of an experiment, decorrelated from its
/// neighbours by a SplitMix64 finalizer.
pub fn replicate_seed(seed: u64, replication: u64) -> u64 {
    let mut z = seed ^ replication.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Well-separated stream ids for the independent random inputs of one run.
pub mod streams {
    pub const COVARIATES: u64 = 1;
    pub const EVENTS: u64 = 2;
    pub const SHIFTS: u64 = 3;
    pub const CONTROLS: u64 = 4;
    pub const FOLDS: u64 = 5;
    pub const PILOT: u64 = 6;

    /// Stream for input `kind` of replication `rep`.
    pub const fn replication(rep: u64, kind: u64) -> u64 {
        (rep << 8) | kind
    }
}
