//! Keyed random streams.
//!
//! Every draw is a pure function of `(seed, stream, t)`: time is cut into
//! blocks of [`BLOCK`] indices and each block owns a ChaCha8 stream keyed by
//! `(seed, stream)` with the block number as stream id. Any time window can
//! therefore be regenerated independently of how it was visited before,
//! which is what couples the time-varying path with its stationary
//! approximations and keeps Monte Carlo runs independent of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLOCK: i64 = 64;

/// Stream id of the regression noise `f(xi_t)`.
pub const STREAM_NOISE: u64 = 1;
/// Stream ids of the covariate innovations start here, one per component.
pub const STREAM_COVARIATE: u64 = 1000;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` derived from a master seed.
pub fn subseed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

fn stream_key(seed: u64, stream: u64) -> [u8; 32] {
    let mut state = splitmix64(seed) ^ splitmix64(stream ^ 0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// Standardized innovation law (mean 0, variance 1).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDist {
    #[default]
    Gaussian,
    StudentT { df: f64 },
    Uniform,
}

impl NoiseDist {
    pub fn validate(&self) -> Result<()> {
        if let NoiseDist::StudentT { df } = *self {
            if !(df > 2.0 && df.is_finite()) {
                return Err(Error::Config(format!(
                    "Student-t noise needs df > 2 for unit variance, got {df}"
                )));
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            NoiseDist::Gaussian => StandardNormal.sample(rng),
            NoiseDist::StudentT { df } => {
                let t: f64 = StudentT::new(df).expect("validated df").sample(rng);
                t / (df / (df - 2.0)).sqrt()
            }
            NoiseDist::Uniform => {
                let h = 3f64.sqrt();
                rng.random_range(-h..h)
            }
        }
    }
}

/// Random field `t -> draw(seed, stream, t)` over all integer times.
#[derive(Debug, Clone)]
pub struct NoiseField {
    key: [u8; 32],
    dist: NoiseDist,
}

impl NoiseField {
    pub fn new(seed: u64, stream: u64, dist: NoiseDist) -> Self {
        Self {
            key: stream_key(seed, stream),
            dist,
        }
    }

    fn block(&self, block: i64) -> [f64; BLOCK as usize] {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(block as u64);
        let mut out = [0.0; BLOCK as usize];
        for v in &mut out {
            *v = self.dist.draw(&mut rng);
        }
        out
    }

    /// Draws for times `t0, t0 + 1, ..., t0 + len - 1`.
    pub fn window(&self, t0: i64, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        let end = t0 + len as i64;
        let mut t = t0;
        while t < end {
            let b = t.div_euclid(BLOCK);
            let vals = self.block(b);
            let block_end = ((b + 1) * BLOCK).min(end);
            for s in t..block_end {
                out.push(vals[(s - b * BLOCK) as usize]);
            }
            t = block_end;
        }
        out
    }

    pub fn at(&self, t: i64) -> f64 {
        self.window(t, 1)[0]
    }
}
