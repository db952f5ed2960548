//! Stable, version-independent hashing for seed derivation.
//!
//! Every source of randomness in the engine (jitter, synthetic predictors,
//! simulated engagement draws) derives its stream from a recorded master seed
//! through these functions, so replays are byte-identical across runs,
//! platforms, and worker counts. `std::hash` is deliberately avoided: its
//! output is not guaranteed stable between compiler releases.

/// FNV-1a over a byte slice, folded into a running state.
fn fnv1a(mut state: u64, bytes: &[u8]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(PRIME);
    }
    state
}

/// splitmix64 finalizer; decorrelates nearby inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Incremental stable hasher seeded from a master seed.
#[derive(Debug, Clone, Copy)]
pub struct StableHasher(u64);

impl StableHasher {
    pub fn new(seed: u64) -> Self {
        StableHasher(fnv1a(0xcbf2_9ce4_8422_2325, &seed.to_le_bytes()))
    }

    pub fn write_bytes(mut self, bytes: &[u8]) -> Self {
        self.0 = fnv1a(self.0, bytes);
        self
    }

    pub fn write_str(self, s: &str) -> Self {
        self.write_bytes(s.as_bytes())
    }

    pub fn write_u64(self, v: u64) -> Self {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn write_i64(self, v: i64) -> Self {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn finish(self) -> u64 {
        mix(self.0)
    }
}

/// One-shot hash of a seed plus a string label.
pub fn stable_hash64(seed: u64, label: &str) -> u64 {
    StableHasher::new(seed).write_str(label).finish()
}

/// Map a hash to a uniform f64 in [0, 1) using the top 53 bits.
pub fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
