//! Portable seeded random streams.
//!
//! Every stochastic stage draws from a ChaCha8 stream keyed by a 64-bit seed
//! and a stream index, so parallel and serial runs consume identical random
//! numbers per task. Normal deviates come from the Box-Muller transform over
//! the stream's uniform `f64` output.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream indices reserved by the pipeline stages. Per-item substreams are
/// offset from these bases.
pub mod streams {
    pub const CNN_INIT: u64 = 1;
    pub const CNN_SHUFFLE: u64 = 2;
    pub const CNN_DROPOUT: u64 = 3;
    pub const SPLIT: u64 = 10;
    pub const FOREST: u64 = 1 << 20;
    pub const AUGMENT: u64 = 1 << 32;
    pub const KMEANS: u64 = 1 << 40;
    pub const SYNTH: u64 = 1 << 48;
}

/// A ChaCha8 generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal sampler using the Box-Muller transform.
///
/// Each pair of uniforms yields two deviates; the second is cached and
/// returned by the next call.
#[derive(Debug, Clone, Default)]
pub struct BoxMuller {
    spare: Option<f64>,
}

impl BoxMuller {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sample<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - rng.gen::<f64>();
        let u2 = rng.gen::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}
