//! Counter-based pseudorandom numbers.
//!
//! Every draw is a pure function of `(key, counter)`, so a stream can be
//! sharded across workers by splitting the counter range and the merged
//! result is independent of evaluation order. Keys for sub-streams are
//! derived deterministically with [`CounterRng::split`].

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_SALT: u64 = 0xC2B2_AE3D_27D4_EB4F;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for a numbered sub-stream of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ stream.wrapping_mul(STREAM_SALT))
}

/// Stateless keyed generator over a 64-bit counter space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ GOLDEN),
        }
    }

    /// Generator for sub-stream `stream`, independent of this one.
    pub fn split(&self, stream: u64) -> Self {
        Self {
            key: derive_seed(self.key, stream),
        }
    }

    /// Raw bits at position `counter`.
    pub fn bits_at(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in the open interval (0, 1); safe to pass to `ln`.
    pub fn uniform_at(&self, counter: u64) -> f64 {
        ((self.bits_at(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard-normal pair via Box-Muller. Sample `index` consumes counters
    /// `2*index` and `2*index + 1`, keeping the counter layout shard-stable.
    pub fn normal_pair_at(&self, index: u64) -> (f64, f64) {
        let u1 = self.uniform_at(2 * index);
        let u2 = self.uniform_at(2 * index + 1);
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        (radius * angle.cos(), radius * angle.sin())
    }
}
