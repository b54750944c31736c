//! Weak and strong stochastic perturbations for vector data.
//!
//! The weak view adds small Gaussian noise (the vector analogue of
//! flip-and-shift); the strong view adds larger noise, rescales by a random
//! scalar, and zeroes dimensions at random. What consistency training needs
//! from these is only the asymmetry: the strong view must perturb more, in
//! expectation, than the weak view used to produce pseudo-labels.
//!
//! Noise strengths are expressed as fractions of the per-dimension train-set
//! std, so configs transfer across datasets with different scales.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strength parameters for both views. All noise is relative to the train
/// split's per-dimension std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Weak-view noise std (fraction of per-dimension train std).
    pub weak_sigma: f64,
    /// Strong-view noise std, same units; should exceed `weak_sigma`.
    pub strong_sigma: f64,
    /// Strong view multiplies by one scalar drawn uniformly from this range.
    pub strong_scale_range: [f64; 2],
    /// Strong view zeroes each output dimension with this probability.
    pub strong_drop_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            weak_sigma: 0.05,
            strong_sigma: 0.25,
            strong_scale_range: [0.7, 1.3],
            strong_drop_prob: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weak_sigma >= 0.0) {
            return Err(Error::Config("augment.weak_sigma must be >= 0".into()));
        }
        if !(self.strong_sigma >= self.weak_sigma) {
            return Err(Error::Config(
                "augment.strong_sigma must be at least augment.weak_sigma".into(),
            ));
        }
        let [lo, hi] = self.strong_scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(
                "augment.strong_scale_range must satisfy 0 < lo <= hi".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.strong_drop_prob) {
            return Err(Error::Config(
                "augment.strong_drop_prob must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Augmentation with the train statistics baked in. Stateless: callers pass
/// the rng, so each worker owns its stream.
#[derive(Debug, Clone)]
pub struct Augmenter {
    config: AugmentConfig,
    train_std: Vec<f64>,
}

impl Augmenter {
    pub fn new(config: &AugmentConfig, train_std: &[f64]) -> Result<Self> {
        config.validate()?;
        if train_std.is_empty() {
            return Err(Error::Config("augmenter needs per-dimension train std".into()));
        }
        Ok(Augmenter {
            config: config.clone(),
            train_std: train_std.to_vec(),
        })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.config
    }

    /// Weak view: `x + ε`, `ε ~ N(0, (weak_sigma·σ_train)²)` per dimension.
    pub fn weak(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.train_std.len());
        x.iter()
            .zip(&self.train_std)
            .map(|(&v, &std)| {
                let eps: f64 = StandardNormal.sample(rng);
                v + self.config.weak_sigma * std * eps
            })
            .collect()
    }

    /// Strong view: `mask ⊙ (s·(x + ε))` with one scalar `s ~ U[lo, hi]`,
    /// per-dimension noise `ε ~ N(0, (strong_sigma·σ_train)²)`, and
    /// `mask_i ~ Bernoulli(1 − drop_prob)`.
    ///
    /// Draw order is fixed (scale, then per dimension noise and mask) so a
    /// given rng state always yields the same view.
    pub fn strong(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.train_std.len());
        let [lo, hi] = self.config.strong_scale_range;
        let scale = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        x.iter()
            .zip(&self.train_std)
            .map(|(&v, &std)| {
                let eps: f64 = StandardNormal.sample(rng);
                let keep = rng.gen::<f64>() >= self.config.strong_drop_prob;
                if keep {
                    scale * (v + self.config.strong_sigma * std * eps)
                } else {
                    0.0
                }
            })
            .collect()
    }
}
