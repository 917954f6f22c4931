use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::TrainingPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub target_positive_fraction: f64,
    pub seed: u64,
    /// Keep each drawn pair's weight in the loss instead of resetting it to 1.
    #[serde(default)]
    pub carry_weights: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            target_positive_fraction: 0.3,
            seed: 0,
            carry_weights: false,
        }
    }
}

impl SamplerConfig {
    /// Number of positive draws that brings `negatives` to the target fraction.
    pub fn draws_for(&self, negatives: usize) -> usize {
        let f = self.target_positive_fraction;
        ((f * negatives as f64 / (1.0 - f)).round() as usize).max(1)
    }
}

/// Returns the negatives unchanged followed by positives drawn with
/// replacement, each with probability proportional to its weight.
pub fn oversample(
    originals: &[TrainingPair],
    pseudo: &[TrainingPair],
    negatives: &[TrainingPair],
    cfg: &SamplerConfig,
) -> Result<Vec<TrainingPair>> {
    let f = cfg.target_positive_fraction;
    if !(f > 0.0 && f <= 0.5) {
        return Err(Error::Config(format!("target positive fraction {f} outside (0, 0.5]")));
    }
    let pool: Vec<&TrainingPair> = originals.iter().chain(pseudo).collect();
    if pool.is_empty() {
        return Err(Error::EmptyInput("no positive pairs to over-sample".into()));
    }
    let index = WeightedIndex::new(pool.iter().map(|p| p.weight))
        .map_err(|e| Error::Data(format!("positive weights unusable for sampling: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draws = cfg.draws_for(negatives.len());

    let mut out = Vec::with_capacity(negatives.len() + draws);
    out.extend_from_slice(negatives);
    for _ in 0..draws {
        let mut pair = pool[index.sample(&mut rng)].clone();
        if !cfg.carry_weights {
            pair.weight = 1.0;
        }
        out.push(pair);
    }
    Ok(out)
}
