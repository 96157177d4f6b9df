//! Seeded pseudorandom streams.
//!
//! Every random draw in the crate goes through [`stream`], which builds a
//! ChaCha8 generator from a `(seed, stream id)` pair. ChaCha output and
//! `rand`'s 53-bit uniform `f64` conversion are platform independent, so a
//! seed reproduces the same values everywhere.
//!
//! Standard normals come from the Marsaglia polar method: draw `u, v`
//! uniform on `[-1, 1)` until `s = u² + v²` lies in `(0, 1)`, then emit
//! `u·√(−2 ln s / s)` and cache `v·√(−2 ln s / s)` for the next call.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard-normal sampler using the polar method over a seeded stream.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng, spare: None }
    }

    pub fn from_seed(seed: u64, stream_id: u64) -> Self {
        Self::new(stream(seed, stream_id))
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.rng.gen::<f64>() - 1.0;
            let v = 2.0 * self.rng.gen::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let k = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * k);
                return u * k;
            }
        }
    }
}
