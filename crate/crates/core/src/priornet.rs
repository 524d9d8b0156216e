//! Pose-to-segmentation prior: maps 2-D joints to a body-part map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{ConfusionAccumulator, IoUReport};
use crate::nn::{
    self, softmax_ce_grad, softmax_chw, Adam, Conv2d, Feature, Linear, ParamAllocator,
    PixelTargets, Real, UpConv2x2,
};
use crate::segnet::{BatchSampler, EpochLog};
use crate::types::{argmax_mask, HardMask, KeypointSet, ProbMap, Sample, NUM_CLASSES, NUM_JOINTS};

const INPUT: usize = NUM_JOINTS * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Side of the first spatial feature map.
    pub grid: usize,
    /// Channels of the first spatial map; halved at each upsampling.
    pub width: usize,
    /// Number of 2× upsampling stages.
    pub stages: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            width: 64,
            stages: 3,
        }
    }
}

impl PriorConfig {
    /// Side of the output map.
    pub fn resolution(&self) -> usize {
        self.grid << self.stages
    }

    fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.width == 0 || self.stages == 0 || self.stages > 6 {
            return Err(Error::Config(format!(
                "invalid prior network shape {self:?}"
            )));
        }
        Ok(())
    }
}

const HIDDEN: usize = 256;

#[derive(Debug, Clone, PartialEq)]
struct PriorArch {
    fc1: Linear,
    fc2: Linear,
    ups: Vec<UpConv2x2>,
    head: Conv2d,
    len: usize,
    blocks: Vec<(std::ops::Range<usize>, usize)>,
}

impl PriorArch {
    fn new(c: &PriorConfig) -> Self {
        let mut a = ParamAllocator::new();
        let fc1 = a.linear(INPUT, HIDDEN);
        let fc2 = a.linear(HIDDEN, c.width * c.grid * c.grid);
        let mut ch = c.width;
        let ups = (0..c.stages)
            .map(|_| {
                let next = (ch / 2).max(8);
                let u = a.upconv(ch, next);
                ch = next;
                u
            })
            .collect();
        let blocks = a.weight_blocks().to_vec();
        let head = a.conv(ch, NUM_CLASSES, 3, 1, 1);
        Self {
            fc1,
            fc2,
            ups,
            head,
            len: a.len(),
            blocks,
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PriorForward<T> {
    input: Vec<T>,
    hidden: Vec<T>,
    maps: Vec<Feature<T>>,
    logits: Feature<T>,
    probs: Vec<T>,
}

impl<T: Real> PriorForward<T> {
    pub fn prob_map(&self) -> ProbMap {
        let logits: Vec<f32> = self.logits.data.iter().map(|v| v.as_f64() as f32).collect();
        ProbMap::from_logits_chw(self.logits.h, self.logits.w, &logits)
    }

    pub fn objective(&self, terms: &[PixelTargets<'_, T>]) -> T {
        nn::ce_objective(&self.logits.data, NUM_CLASSES, terms)
    }

    /// Which ReLU units are active. A finite-difference step that changes
    /// this pattern straddles a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let maps = self.maps.iter().flat_map(|f| f.data.iter());
        self.hidden
            .iter()
            .chain(maps)
            .map(|&v| v > T::zero())
            .collect()
    }
}

/// Keypoints in, per-pixel class distribution out.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel<T = f32> {
    config: PriorConfig,
    arch: PriorArch,
    params: Vec<T>,
}

impl<T: Real> PriorModel<T> {
    pub fn new(config: PriorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = PriorArch::new(&config);
        let params = nn::init_params(arch.len, &arch.blocks, seed);
        Ok(Self {
            config,
            arch,
            params,
        })
    }

    pub fn from_params(config: PriorConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let arch = PriorArch::new(&config);
        if params.len() != arch.len {
            return Err(Error::shape(
                format!("{} parameters", arch.len),
                format!("{} parameters", params.len()),
            ));
        }
        Ok(Self {
            config,
            arch,
            params,
        })
    }

    pub fn config(&self) -> &PriorConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution()
    }

    pub fn forward(&self, keypoints: &KeypointSet) -> PriorForward<T> {
        let p = &self.params;
        let input: Vec<T> = keypoints
            .encode()
            .iter()
            .map(|&v| T::from_f64(v as f64))
            .collect();
        let mut hidden = self.arch.fc1.forward(p, &input);
        nn::relu_inplace(&mut hidden);
        let mut first = self.arch.fc2.forward(p, &hidden);
        nn::relu_inplace(&mut first);
        let g = self.config.grid;
        let mut maps = vec![Feature::from_vec(self.config.width, g, g, first)];
        for u in &self.arch.ups {
            let mut y = u.forward(p, maps.last().expect("at least one map"));
            nn::relu_inplace(&mut y.data);
            maps.push(y);
        }
        let logits = self
            .arch
            .head
            .forward(p, maps.last().expect("at least one map"));
        let probs = softmax_chw(&logits.data, NUM_CLASSES);
        PriorForward {
            input,
            hidden,
            maps,
            logits,
            probs,
        }
    }

    /// Accumulates the gradient of `fwd.objective(terms)` into `grad`.
    pub fn backward(&self, fwd: &PriorForward<T>, terms: &[PixelTargets<'_, T>], grad: &mut [T]) {
        assert_eq!(grad.len(), self.params.len(), "gradient length");
        let p = &self.params;
        let (h, w) = (fwd.logits.h, fwd.logits.w);
        let dlogits = Feature::from_vec(
            NUM_CLASSES,
            h,
            w,
            softmax_ce_grad(&fwd.probs, NUM_CLASSES, terms),
        );
        let last = fwd.maps.len() - 1;
        let mut dy = self
            .arch
            .head
            .backward(p, &fwd.maps[last], &dlogits, grad, true)
            .expect("input gradient requested");
        for (i, u) in self.arch.ups.iter().enumerate().rev() {
            nn::relu_backward(&fwd.maps[i + 1].data, &mut dy.data);
            dy = u.backward(p, &fwd.maps[i], &dy, grad);
        }
        nn::relu_backward(&fwd.maps[0].data, &mut dy.data);
        let mut dh = self.arch.fc2.backward(p, &fwd.hidden, &dy.data, grad);
        nn::relu_backward(&fwd.hidden, &mut dh);
        self.arch.fc1.backward(p, &fwd.input, &dh, grad);
    }

    /// Soft body-part prior for `keypoints`.
    pub fn infer(&self, keypoints: &KeypointSet) -> ProbMap {
        self.forward(keypoints).prob_map()
    }

    /// Hard prior labels, the argmax of [`PriorModel::infer`].
    pub fn pseudo_labels(&self, keypoints: &KeypointSet) -> HardMask {
        argmax_mask(&self.infer(keypoints))
    }
}

/// Soft prior of `model` for one pose.
pub fn infer_prior(model: &PriorModel<f32>, keypoints: &KeypointSet) -> ProbMap {
    model.infer(keypoints)
}

/// Hard prior labels of `model` for one pose.
pub fn prior_pseudo(model: &PriorModel<f32>, keypoints: &KeypointSet) -> HardMask {
    model.pseudo_labels(keypoints)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Train on horizontally mirrored copies half of the time.
    pub mirror_augment: bool,
}

impl Default for PriorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 32,
            lr: 1e-3,
            mirror_augment: true,
        }
    }
}

fn labelled_pairs(
    samples: &[Sample],
    resolution: usize,
) -> Result<Vec<(&KeypointSet, &HardMask)>> {
    samples
        .iter()
        .map(|s| {
            let mask = s.mask.as_ref().ok_or(Error::MissingLabels(s.id))?;
            let kp = s.keypoints.as_ref().ok_or(Error::MissingLabels(s.id))?;
            if mask.height() != resolution || mask.width() != resolution {
                return Err(Error::shape(
                    format!("{resolution}x{resolution} mask"),
                    format!("{}x{}", mask.height(), mask.width()),
                ));
            }
            Ok((kp, mask))
        })
        .collect()
}

/// Fits the prior on (keypoints, mask) pairs with pooled per-pixel CE.
pub fn train_prior(
    model: &mut PriorModel<f32>,
    samples: &[Sample],
    config: &PriorTrainConfig,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    if config.epochs == 0 || config.batch_size == 0 || !config.lr.is_finite() || config.lr <= 0.0 {
        return Err(Error::Config(
            "prior training needs positive epochs, batch_size and lr".into(),
        ));
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs = labelled_pairs(samples, model.resolution())?;
    let iters = samples.len().div_ceil(config.batch_size);
    let mut sampler = BatchSampler::new(samples.len(), seed)?;
    let mut flips = ChaCha8Rng::seed_from_u64(seed);
    flips.set_stream(1);
    let mut opt = Adam::new(model.num_params());
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..iters {
            let idx = sampler.next_batch(config.batch_size);
            let batch: Vec<(KeypointSet, HardMask)> = idx
                .iter()
                .map(|&i| {
                    let (kp, mask) = pairs[i];
                    if config.mirror_augment && flips.random_bool(0.5) {
                        (kp.mirrored(), mask.mirrored())
                    } else {
                        (*kp, mask.clone())
                    }
                })
                .collect();
            let valid: usize = batch.iter().map(|(_, m)| m.labeled_count()).sum();
            if valid == 0 {
                continue;
            }
            let scale = 1.0 / valid as f32;
            let m = &*model;
            let results = exec::map(&batch, |(kp, mask)| {
                let fwd = m.forward(kp);
                let terms = [PixelTargets {
                    labels: mask.labels(),
                    scale,
                }];
                let mut g = vec![0.0f32; m.num_params()];
                m.backward(&fwd, &terms, &mut g);
                (fwd.objective(&terms) as f64, g)
            });
            let mut grad = vec![0.0f32; model.num_params()];
            for (loss, g) in &results {
                loss_sum += loss;
                nn::add_into(&mut grad, g);
            }
            opt.step(model.params_mut(), &grad, config.lr);
        }
        logs.push(EpochLog {
            epoch,
            lr: config.lr,
            loss: loss_sum / iters as f64,
        });
    }
    Ok(logs)
}

/// Pooled IoU of the prior's hard labels against ground-truth masks.
pub fn evaluate_prior(model: &PriorModel<f32>, samples: &[Sample]) -> Result<IoUReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs = labelled_pairs(samples, model.resolution())?;
    let accs = exec::map(&pairs, |(kp, mask)| -> Result<ConfusionAccumulator> {
        let mut acc = ConfusionAccumulator::new();
        acc.accumulate(&model.pseudo_labels(kp), mask)?;
        Ok(acc)
    });
    let mut total = ConfusionAccumulator::new();
    for acc in accs {
        total.merge(&acc?);
    }
    Ok(total.report())
}
