//! Seeded random streams.
//!
//! Every stage draws from its own ChaCha stream derived from one run seed,
//! so a stage can be held fixed while others vary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Named substreams of a run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Batches = 3,
    ParamNoise = 4,
    Gumbel = 5,
    Inducing = 6,
    Coreset = 7,
    Eval = 8,
    Grid = 9,
}

pub fn substream(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Standard normal draws.
pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Standard Gumbel draws, `−ln(−ln u)` with `u ∈ (0, 1)`.
pub fn gumbel_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// The streams a trainer consumes while fitting a task.
pub struct TrainRngs {
    pub batches: StreamRng,
    pub param_noise: StreamRng,
    pub gumbel: StreamRng,
    pub inducing: StreamRng,
    pub coreset: StreamRng,
}

impl TrainRngs {
    pub fn from_seed(seed: u64) -> Self {
        TrainRngs {
            batches: substream(seed, Stream::Batches),
            param_noise: substream(seed, Stream::ParamNoise),
            gumbel: substream(seed, Stream::Gumbel),
            inducing: substream(seed, Stream::Inducing),
            coreset: substream(seed, Stream::Coreset),
        }
    }
}
