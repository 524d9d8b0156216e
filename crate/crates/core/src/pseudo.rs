//! Confidence-thresholded pseudo-labels and pose-guided batch splitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::miou_image;
use crate::types::{argmax, argmax_mask, HardMask, ProbMap, IGNORE};

/// Thresholds used by the self-training terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Confidence threshold of the plain pseudo-label loss.
    pub tau: f64,
    /// Minimum agreement score for an image to count as reliable.
    pub gamma: f64,
    /// Confidence threshold on reliable images.
    pub alpha: f64,
    /// Confidence threshold on unreliable images.
    pub beta: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            gamma: 0.25,
            alpha: 0.75,
            beta: 0.85,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau", self.tau),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} outside (0, 1]")));
            }
        }
        if self.beta < self.alpha {
            return Err(Error::Config(format!(
                "beta ({}) must be at least alpha ({})",
                self.beta, self.alpha
            )));
        }
        Ok(())
    }
}

/// Reliable/unreliable partition of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSplit {
    pub reliable_indices: Vec<usize>,
    pub unreliable_indices: Vec<usize>,
    pub scores: Vec<f64>,
    /// Fraction of the batch that is reliable.
    pub lambda: f64,
}

impl BatchSplit {
    pub fn batch_size(&self) -> usize {
        self.scores.len()
    }

    /// Checks that the index sets partition `0..B` and that `lambda` matches.
    pub fn validate(&self) -> Result<()> {
        let b = self.batch_size();
        let mut seen = vec![false; b];
        for &i in self.reliable_indices.iter().chain(&self.unreliable_indices) {
            if i >= b || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidSplit(format!(
                    "index {i} repeated or outside 0..{b}"
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidSplit("indices do not cover the batch".into()));
        }
        let expected = if b == 0 {
            0.0
        } else {
            self.reliable_indices.len() as f64 / b as f64
        };
        if self.lambda != expected {
            return Err(Error::InvalidSplit(format!(
                "lambda {} does not equal |reliable|/B = {expected}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Hard pseudo-labels: the argmax class where the model is at least
/// `threshold` confident, IGNORE elsewhere.
pub fn extract_pseudo_labels(pm: &ProbMap, threshold: f64) -> HardMask {
    let labels = pm
        .pixels()
        .map(|px| {
            let k = argmax(px);
            if px[k] as f64 >= threshold {
                k as u8
            } else {
                IGNORE
            }
        })
        .collect();
    HardMask::from_raw(pm.height(), pm.width(), labels)
}

/// Agreement of each prediction with its pose prior, as image mIoU.
pub fn score_batch(preds: &[ProbMap], priors: &[HardMask]) -> Result<Vec<f64>> {
    if preds.len() != priors.len() {
        return Err(Error::shape(
            format!("{} priors", preds.len()),
            format!("{} priors", priors.len()),
        ));
    }
    preds
        .iter()
        .zip(priors)
        .map(|(pm, prior)| miou_image(&argmax_mask(pm), prior))
        .collect()
}

/// Images scoring at least `gamma` are reliable.
pub fn split_batch(scores: &[f64], gamma: f64) -> BatchSplit {
    let (reliable_indices, unreliable_indices): (Vec<usize>, Vec<usize>) =
        (0..scores.len()).partition(|&j| scores[j] >= gamma);
    let lambda = if scores.is_empty() {
        0.0
    } else {
        reliable_indices.len() as f64 / scores.len() as f64
    };
    BatchSplit {
        reliable_indices,
        unreliable_indices,
        scores: scores.to_vec(),
        lambda,
    }
}
