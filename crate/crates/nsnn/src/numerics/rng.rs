use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Stafford mix13 finalizer, the output function of SplitMix64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an odd increment with enough bit transitions, as in SplittableRandom.
#[inline]
fn mix_gamma(z: u64) -> u64 {
    let z = mix64(z ^ GOLDEN_GAMMA) | 1;
    if (z ^ (z >> 1)).count_ones() < 24 {
        z ^ 0xaaaa_aaaa_aaaa_aaaa
    } else {
        z
    }
}

/// Counter-based splittable random stream.
///
/// Output `k` of a stream is `mix64(seed + (k+1) * gamma(stream_id))`, so the
/// sequence is a pure function of `(seed, stream_id, counter)`: replaying a
/// recorded experiment reproduces every draw bit-exactly, and distinct
/// `stream_id`s give statistically independent sequences regardless of how
/// work is split across workers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream {
            seed,
            stream_id,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Derive an independent child stream. Children with distinct tags (or
    /// from distinct parents) get distinct stream ids, so one stream per
    /// (worker, population, timestep-block) is cheap to mint.
    pub fn child(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed, mix64(self.stream_id.rotate_left(17) ^ tag ^ GOLDEN_GAMMA))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        let gamma = mix_gamma(self.stream_id);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(gamma)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn sample_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in the open interval `(0, 1)`; safe under `ln`.
    pub(crate) fn open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Zero-mean Gaussian draw with standard deviation `sigma` (Box-Muller).
    pub fn sample_gaussian(&mut self, sigma: f64) -> Result<f64> {
        if sigma.is_nan() || sigma < 0.0 {
            return Err(Error::Parameter(format!(
                "gaussian sigma must be >= 0, got {sigma}"
            )));
        }
        let u1 = self.open_uniform();
        let u2 = self.sample_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        Ok(sigma * r * (std::f64::consts::TAU * u2).cos())
    }
}
