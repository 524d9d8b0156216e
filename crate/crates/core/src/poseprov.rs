//! Simulated pose estimators: ground-truth joints degraded by jitter,
//! dropouts and left/right confusions.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Image, Joint, KeypointSet, Sample, NUM_JOINTS};

/// Source of 2-D joints for unlabeled images.
pub trait PoseProvider: Send + Sync {
    fn estimate(&self, id: u64, image: &Image) -> Result<KeypointSet>;
}

/// Degradation applied to oracle joints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseCorruption {
    /// Per-axis Gaussian noise, in normalized coordinates.
    pub jitter_std: f64,
    /// Probability that a joint is reported invisible.
    pub miss_rate: f64,
    /// Probability that a left/right pair is swapped.
    pub swap_rate: f64,
}

impl Default for PoseCorruption {
    fn default() -> Self {
        Self::none()
    }
}

impl PoseCorruption {
    pub const fn none() -> Self {
        Self {
            jitter_std: 0.0,
            miss_rate: 0.0,
            swap_rate: 0.0,
        }
    }

    /// Estimator tuned on the target domain.
    pub const fn adapted() -> Self {
        Self {
            jitter_std: 0.01,
            miss_rate: 0.02,
            swap_rate: 0.0,
        }
    }

    /// Estimator trained on the source domain only.
    pub const fn unadapted() -> Self {
        Self {
            jitter_std: 0.06,
            miss_rate: 0.15,
            swap_rate: 0.05,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "none" => Some(Self::none()),
            "adapted" => Some(Self::adapted()),
            "unadapted" => Some(Self::unadapted()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(Error::Config(format!(
                "jitter_std {} invalid",
                self.jitter_std
            )));
        }
        for (name, p) in [("miss_rate", self.miss_rate), ("swap_rate", self.swap_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Corrupts `truth` with a deterministic stream keyed by `(seed, id)`.
    pub fn apply(&self, truth: &KeypointSet, seed: u64, id: u64) -> KeypointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        let mut coords = truth.coords;
        let mut visible = truth.visible;
        for &(l, r) in &Joint::LR_PAIRS {
            if rng.random_bool(self.swap_rate) {
                coords.swap(l, r);
                visible.swap(l, r);
            }
        }
        let noise = Normal::new(0.0, self.jitter_std).expect("validated std");
        for j in 0..NUM_JOINTS {
            let missed = rng.random_bool(self.miss_rate);
            let dx = noise.sample(&mut rng);
            let dy = noise.sample(&mut rng);
            if missed || !visible[j] {
                visible[j] = false;
                coords[j] = [0.0, 0.0];
            } else {
                coords[j] = [
                    (coords[j][0] as f64 + dx).clamp(0.0, 1.0) as f32,
                    (coords[j][1] as f64 + dy).clamp(0.0, 1.0) as f32,
                ];
            }
        }
        KeypointSet { coords, visible }
    }
}

/// Looks up stored ground-truth joints by image id and corrupts them.
#[derive(Debug, Clone)]
pub struct OracleProvider {
    truth: HashMap<u64, KeypointSet>,
    corruption: PoseCorruption,
    seed: u64,
}

impl OracleProvider {
    pub fn new(
        truth: HashMap<u64, KeypointSet>,
        corruption: PoseCorruption,
        seed: u64,
    ) -> Result<Self> {
        corruption.validate()?;
        Ok(Self {
            truth,
            corruption,
            seed,
        })
    }

    /// Collects the joints of every sample that carries them.
    pub fn from_samples(samples: &[Sample], corruption: PoseCorruption, seed: u64) -> Result<Self> {
        let truth = samples
            .iter()
            .filter_map(|s| s.keypoints.map(|k| (s.id, k)))
            .collect();
        Self::new(truth, corruption, seed)
    }

    pub fn corruption(&self) -> &PoseCorruption {
        &self.corruption
    }
}

impl PoseProvider for OracleProvider {
    fn estimate(&self, id: u64, _image: &Image) -> Result<KeypointSet> {
        let truth = self.truth.get(&id).ok_or(Error::UnknownImage(id))?;
        Ok(self.corruption.apply(truth, self.seed, id))
    }
}
