//! The cubic benchmark `y = x^3 + eps`, `eps ~ N(0, 4^2)`.
//!
//! `x` is `U[-1, 1]` with probability 0.9 and `1 + |N(0, 1)|` otherwise, so a
//! thin right tail of the inputs has few neighbors. A locally valid method
//! should widen there (often to infinity), while a marginal method does not.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Probability of the `U[-1, 1]` branch.
    pub uniform_prob: f64,
    /// Scale of the half-normal tail branch on `[1, inf)`.
    pub halfnormal_sigma: f64,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            noise_sigma: 4.0,
            uniform_prob: 0.9,
            halfnormal_sigma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.uniform_prob) {
            return Err(Error::InvalidConfig(alloc::format!(
                "uniform_prob must lie in [0, 1], got {}",
                self.uniform_prob
            )));
        }
        for (name, s) in [
            ("noise_sigma", self.noise_sigma),
            ("halfnormal_sigma", self.halfnormal_sigma),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{name} must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub y: f64,
}

/// Draws `config.n` i.i.d. samples. The stream is fixed by `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tail = Normal::new(0.0, config.halfnormal_sigma)
        .map_err(|e| Error::InvalidConfig(alloc::format!("{e}")))?;
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::InvalidConfig(alloc::format!("{e}")))?;
    Ok((0..config.n)
        .map(|_| {
            let x = if rng.random_bool(config.uniform_prob) {
                rng.random_range(-1.0..=1.0)
            } else {
                let z: f64 = tail.sample(&mut rng);
                1.0 + z.abs()
            };
            let eps: f64 = noise.sample(&mut rng);
            Sample {
                x,
                y: x * x * x + eps,
            }
        })
        .collect())
}

/// Cuts `n` rows into consecutive parts proportional to `fractions`.
///
/// The last part absorbs rounding. Rows are i.i.d., so contiguous parts are
/// valid random splits.
pub fn split_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty()
        || fractions.iter().any(|&f| f.is_nan() || f <= 0.0)
        || (total - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidConfig(
            "split fractions must be positive and sum to 1".into(),
        ));
    }
    let mut sizes: Vec<usize> = fractions[..fractions.len() - 1]
        .iter()
        .map(|f| libm::round(f * n as f64) as usize)
        .collect();
    let used: usize = sizes.iter().sum();
    if used > n {
        return Err(Error::InvalidConfig(
            "split does not fit the sample count".into(),
        ));
    }
    sizes.push(n - used);
    Ok(sizes)
}
