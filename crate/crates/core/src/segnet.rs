//! Encoder-decoder body-part segmenter with skip connections, supervised
//! source training and IoU evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{ConfusionAccumulator, IoUReport};
use crate::nn::{
    self, softmax_ce_grad, softmax_chw, Adam, Conv2d, Feature, LrSchedule, ParamAllocator,
    PixelTargets, Real, UpConv2x2,
};
use crate::types::{
    argmax_mask, check_shape, HardMask, Image, ProbMap, Sample, IGNORE, NUM_CLASSES,
};

/// Probability floor of [`ce_loss`].
pub const CE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegConfig {
    /// Channels of the first encoder stage; later stages double it.
    pub width: usize,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self { width: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SegArch {
    enc: [Conv2d; 4],
    up: [UpConv2x2; 4],
    head: Conv2d,
    len: usize,
    blocks: Vec<(std::ops::Range<usize>, usize)>,
}

impl SegArch {
    fn new(width: usize) -> Self {
        let w = width;
        let mut a = ParamAllocator::new();
        let enc = [
            a.conv(3, w, 3, 2, 1),
            a.conv(w, 2 * w, 3, 2, 1),
            a.conv(2 * w, 4 * w, 3, 2, 1),
            a.conv(4 * w, 8 * w, 3, 2, 1),
        ];
        let up = [
            a.upconv(8 * w, 4 * w),
            a.upconv(8 * w, 2 * w),
            a.upconv(4 * w, w),
            a.upconv(2 * w, 8),
        ];
        let blocks_before_head = a.weight_blocks().to_vec();
        let head = a.conv(8 + 3, NUM_CLASSES, 3, 1, 1);
        Self {
            enc,
            up,
            head,
            len: a.len(),
            // The head starts at zero so the initial prediction is uniform.
            blocks: blocks_before_head,
        }
    }

    fn macs(&self, h: usize, w: usize) -> usize {
        let mut total = 0;
        let (mut hh, mut ww) = (h, w);
        for c in &self.enc {
            total += c.macs(hh, ww);
            (hh, ww) = c.out_hw(hh, ww);
        }
        for u in &self.up {
            total += u.macs(hh, ww);
            (hh, ww) = (2 * hh, 2 * ww);
        }
        total + self.head.macs(h, w)
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SegForward<T> {
    input: Feature<T>,
    enc: [Feature<T>; 4],
    dec: [Feature<T>; 4],
    cat: [Feature<T>; 4],
    logits: Feature<T>,
    probs: Vec<T>,
}

impl<T: Real> SegForward<T> {
    pub fn height(&self) -> usize {
        self.logits.h
    }

    pub fn width(&self) -> usize {
        self.logits.w
    }

    /// Which ReLU units are active. A finite-difference step that changes
    /// this pattern straddles a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.enc
            .iter()
            .chain(&self.dec)
            .flat_map(|f| f.data.iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// Channel-major softmax output.
    pub fn probs_chw(&self) -> &[T] {
        &self.probs
    }

    pub fn prob_map(&self) -> ProbMap {
        let logits: Vec<f32> = self.logits.data.iter().map(|v| v.as_f64() as f32).collect();
        ProbMap::from_logits_chw(self.logits.h, self.logits.w, &logits)
    }

    /// `Σ scale · Σ_pixels −ln softmax[label]`, computed from the logits.
    pub fn objective(&self, terms: &[PixelTargets<'_, T>]) -> T {
        nn::ce_objective(&self.logits.data, NUM_CLASSES, terms)
    }
}

/// Segmentation network; `f32` for training, `f64` for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel<T = f32> {
    config: SegConfig,
    arch: SegArch,
    params: Vec<T>,
}

impl<T: Real> SegModel<T> {
    /// He-initialized model; the head starts at zero.
    pub fn new(config: SegConfig, seed: u64) -> Result<Self> {
        if config.width == 0 {
            return Err(Error::Config("segmenter width must be positive".into()));
        }
        let arch = SegArch::new(config.width);
        let params = nn::init_params(arch.len, &arch.blocks, seed);
        Ok(Self {
            config,
            arch,
            params,
        })
    }

    /// Rebuilds a model from saved parameters.
    pub fn from_params(config: SegConfig, params: Vec<T>) -> Result<Self> {
        let arch = SegArch::new(config.width);
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

    pub fn config(&self) -> &SegConfig {
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

    /// Multiply-accumulates of one forward pass at `h×w`.
    pub fn macs(&self, h: usize, w: usize) -> usize {
        self.arch.macs(h, w)
    }

    pub fn cast<U: Real>(&self) -> SegModel<U> {
        SegModel {
            config: self.config,
            arch: self.arch.clone(),
            params: self
                .params
                .iter()
                .map(|v| U::from_f64(v.as_f64()))
                .collect(),
        }
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let (h, w) = (image.height(), image.width());
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::shape(
                "height and width divisible by 16",
                format!("{h}x{w}"),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, image: &Image) -> Result<SegForward<T>> {
        self.check_input(image)?;
        let p = &self.params;
        let data = image
            .to_chw()
            .iter()
            .map(|&v| T::from_f64(v as f64 - 0.5))
            .collect();
        let input = Feature::from_vec(3, image.height(), image.width(), data);

        let conv_relu = |c: &Conv2d, x: &Feature<T>| {
            let mut y = c.forward(p, x);
            nn::relu_inplace(&mut y.data);
            y
        };
        let e1 = conv_relu(&self.arch.enc[0], &input);
        let e2 = conv_relu(&self.arch.enc[1], &e1);
        let e3 = conv_relu(&self.arch.enc[2], &e2);
        let e4 = conv_relu(&self.arch.enc[3], &e3);

        let up_relu = |u: &UpConv2x2, x: &Feature<T>| {
            let mut y = u.forward(p, x);
            nn::relu_inplace(&mut y.data);
            y
        };
        let d3 = up_relu(&self.arch.up[0], &e4);
        let c3 = d3.concat(&e3);
        let d2 = up_relu(&self.arch.up[1], &c3);
        let c2 = d2.concat(&e2);
        let d1 = up_relu(&self.arch.up[2], &c2);
        let c1 = d1.concat(&e1);
        let d0 = up_relu(&self.arch.up[3], &c1);
        let c0 = d0.concat(&input);
        let logits = self.arch.head.forward(p, &c0);
        let probs = softmax_chw(&logits.data, NUM_CLASSES);
        Ok(SegForward {
            input,
            enc: [e1, e2, e3, e4],
            dec: [d3, d2, d1, d0],
            cat: [c3, c2, c1, c0],
            logits,
            probs,
        })
    }

    /// Accumulates the gradient of `fwd.objective(terms)` into `grad`.
    pub fn backward(&self, fwd: &SegForward<T>, terms: &[PixelTargets<'_, T>], grad: &mut [T]) {
        assert_eq!(grad.len(), self.params.len(), "gradient length");
        let p = &self.params;
        let a = &self.arch;
        let (h, w) = (fwd.logits.h, fwd.logits.w);
        let dlogits = Feature::from_vec(
            NUM_CLASSES,
            h,
            w,
            softmax_ce_grad(&fwd.probs, NUM_CLASSES, terms),
        );

        let dc0 = a
            .head
            .backward(p, &fwd.cat[3], &dlogits, grad, true)
            .expect("input gradient requested");
        let (mut dd0, _) = dc0.split_channels(fwd.dec[3].c);
        nn::relu_backward(&fwd.dec[3].data, &mut dd0.data);

        let dc1 = a.up[3].backward(p, &fwd.cat[2], &dd0, grad);
        let (mut dd1, mut de1_skip) = dc1.split_channels(fwd.dec[2].c);
        nn::relu_backward(&fwd.dec[2].data, &mut dd1.data);

        let dc2 = a.up[2].backward(p, &fwd.cat[1], &dd1, grad);
        let (mut dd2, mut de2_skip) = dc2.split_channels(fwd.dec[1].c);
        nn::relu_backward(&fwd.dec[1].data, &mut dd2.data);

        let dc3 = a.up[1].backward(p, &fwd.cat[0], &dd2, grad);
        let (mut dd3, mut de3_skip) = dc3.split_channels(fwd.dec[0].c);
        nn::relu_backward(&fwd.dec[0].data, &mut dd3.data);

        let mut de4 = a.up[0].backward(p, &fwd.enc[3], &dd3, grad);
        nn::relu_backward(&fwd.enc[3].data, &mut de4.data);

        let de3 = a.enc[3]
            .backward(p, &fwd.enc[2], &de4, grad, true)
            .expect("input gradient requested");
        nn::add_into(&mut de3_skip.data, &de3.data);
        nn::relu_backward(&fwd.enc[2].data, &mut de3_skip.data);

        let de2 = a.enc[2]
            .backward(p, &fwd.enc[1], &de3_skip, grad, true)
            .expect("input gradient requested");
        nn::add_into(&mut de2_skip.data, &de2.data);
        nn::relu_backward(&fwd.enc[1].data, &mut de2_skip.data);

        let de1 = a.enc[1]
            .backward(p, &fwd.enc[0], &de2_skip, grad, true)
            .expect("input gradient requested");
        nn::add_into(&mut de1_skip.data, &de1.data);
        nn::relu_backward(&fwd.enc[0].data, &mut de1_skip.data);

        a.enc[0].backward(p, &fwd.input, &de1_skip, grad, false);
    }

    pub fn predict(&self, image: &Image) -> Result<ProbMap> {
        Ok(self.forward(image)?.prob_map())
    }

    /// Predictions for many images, in order.
    pub fn predict_batch(&self, images: &[&Image]) -> Result<Vec<ProbMap>> {
        exec::map(images, |img| self.predict(img))
            .into_iter()
            .collect()
    }
}

/// Mean of `−ln max(p[label], ε)` over non-IGNORE pixels; 0 when none.
pub fn ce_loss(pm: &ProbMap, mask: &HardMask) -> Result<f64> {
    check_shape(pm, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (px, &label) in pm.pixels().zip(mask.labels()) {
        if label == IGNORE {
            continue;
        }
        sum -= (px[label as usize] as f64).max(CE_EPS).ln();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Pooled IoU of `model` over labelled samples.
pub fn evaluate(model: &SegModel<f32>, samples: &[Sample]) -> Result<IoUReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_sample = exec::map(samples, |s| -> Result<ConfusionAccumulator> {
        let mask = s.mask.as_ref().ok_or(Error::MissingLabels(s.id))?;
        let pred = argmax_mask(&model.predict(&s.image)?);
        let mut acc = ConfusionAccumulator::new();
        acc.accumulate(&pred, mask)?;
        Ok(acc)
    });
    let mut total = ConfusionAccumulator::new();
    for acc in per_sample {
        total.merge(&acc?);
    }
    Ok(total.report())
}

/// Optimization schedule shared by source training and adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs after which the learning rate is divided by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.iters_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs, iters_per_epoch and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !self.decay_factor.is_finite() || self.decay_factor < 1.0 {
            return Err(Error::Config(format!(
                "decay_factor {} below 1",
                self.decay_factor
            )));
        }
        Ok(())
    }

    /// Learning rate during `epoch` (0-based): decays apply after the
    /// listed epochs complete.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        LrSchedule {
            base: self.lr,
            decay_factor: self.decay_factor,
            decay_epochs: self.decay_epochs.clone(),
        }
        .at_epoch(epoch)
    }
}

/// Endless seeded stream of index batches that walks reshuffled epochs.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            cursor: 0,
            rng,
        })
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Sums per-sample gradients in index order.
pub(crate) fn batch_gradient(
    model: &SegModel<f32>,
    forwards: &[SegForward<f32>],
    terms: &[Vec<PixelTargets<'_, f32>>],
) -> Vec<f32> {
    let per_sample = exec::map_range(forwards.len(), |i| {
        let mut g = vec![0.0f32; model.num_params()];
        model.backward(&forwards[i], &terms[i], &mut g);
        g
    });
    let mut total = vec![0.0f32; model.num_params()];
    for g in &per_sample {
        nn::add_into(&mut total, g);
    }
    total
}

/// Supervised training on labelled source samples; pooled per-pixel CE.
pub fn pretrain_source(
    model: &mut SegModel<f32>,
    source: &[Sample],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    schedule.validate()?;
    if source.is_empty() {
        return Err(Error::MissingSourceData);
    }
    let masks: Vec<&HardMask> = source
        .iter()
        .map(|s| s.mask.as_ref().ok_or(Error::MissingLabels(s.id)))
        .collect::<Result<_>>()?;
    let mut sampler = BatchSampler::new(source.len(), seed)?;
    let mut opt = Adam::new(model.num_params());
    let mut logs = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch);
        let mut loss_sum = 0.0;
        for _ in 0..schedule.iters_per_epoch {
            let idx = sampler.next_batch(schedule.batch_size);
            let forwards = exec::map(&idx, |&i| model.forward(&source[i].image))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let valid: usize = idx.iter().map(|&i| masks[i].labeled_count()).sum();
            if valid == 0 {
                continue;
            }
            let scale = 1.0 / valid as f32;
            let terms: Vec<Vec<PixelTargets<f32>>> = idx
                .iter()
                .map(|&i| {
                    vec![PixelTargets {
                        labels: masks[i].labels(),
                        scale,
                    }]
                })
                .collect();
            loss_sum += forwards
                .iter()
                .zip(&terms)
                .map(|(f, t)| f.objective(t) as f64)
                .sum::<f64>();
            let grad = batch_gradient(model, &forwards, &terms);
            opt.step(model.params_mut(), &grad, lr);
        }
        logs.push(EpochLog {
            epoch,
            lr,
            loss: loss_sum / schedule.iters_per_epoch as f64,
        });
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_samples, DomainSpec};
    use crate::types::DomainTag;

    #[test]
    fn fresh_model_predicts_uniform() {
        let m = SegModel::<f32>::new(SegConfig::default(), 0).unwrap();
        let pm = m.predict(&Image::filled(32, 32, [0.3, 0.5, 0.7])).unwrap();
        assert!(pm.probs().iter().all(|&p| (p - 1.0 / 7.0).abs() < 1e-6));
        let mask = HardMask::filled(32, 32, 2);
        assert!((ce_loss(&pm, &mask).unwrap() - 7f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn rejects_indivisible_resolution() {
        let m = SegModel::<f32>::new(SegConfig::default(), 0).unwrap();
        assert!(matches!(
            m.predict(&Image::filled(40, 40, [0.0; 3])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ce_loss_of_perfect_prediction_is_zero() {
        let mask = HardMask::new(1, 3, vec![0, 4, IGNORE]).unwrap();
        let pm = ProbMap::one_hot(&HardMask::new(1, 3, vec![0, 4, 1]).unwrap());
        assert!(ce_loss(&pm, &mask).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ce_loss_clamps_zero_probability() {
        let mask = HardMask::new(1, 1, vec![3]).unwrap();
        let pm = ProbMap::one_hot(&HardMask::new(1, 1, vec![0]).unwrap());
        assert!((ce_loss(&pm, &mask).unwrap() + CE_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn objective_matches_ce_loss() {
        let m = SegModel::<f64>::new(SegConfig { width: 4 }, 3).unwrap();
        let mut m = m;
        for (i, v) in m.params_mut().iter_mut().enumerate() {
            *v += 0.01 * ((i % 13) as f64 - 6.0);
        }
        let samples = generate_samples(1, &DomainSpec::source(), 0, 32, DomainTag::Source).unwrap();
        let mask = samples[0].mask.as_ref().unwrap();
        let fwd = m.forward(&samples[0].image).unwrap();
        let n = mask.labeled_count() as f64;
        let obj = fwd.objective(&[PixelTargets {
            labels: mask.labels(),
            scale: 1.0 / n,
        }]);
        let ce = ce_loss(&fwd.prob_map(), mask).unwrap();
        assert!((obj - ce).abs() < 1e-5, "{obj} vs {ce}");
    }

    #[test]
    fn sampler_covers_every_index_per_pass() {
        let mut s = BatchSampler::new(10, 1).unwrap();
        let mut seen = s.next_batch(10);
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert!(BatchSampler::new(0, 1).is_err());
    }

    #[test]
    fn schedule_validation() {
        let mut s = TrainSchedule {
            epochs: 3,
            iters_per_epoch: 2,
            batch_size: 4,
            lr: 1e-3,
            decay_epochs: vec![1],
            decay_factor: 10.0,
        };
        s.validate().unwrap();
        assert_eq!(s.lr_at(0), 1e-3);
        assert!((s.lr_at(1) - 1e-4).abs() < 1e-15);
        s.batch_size = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn pretrain_needs_labels() {
        let mut samples =
            generate_samples(2, &DomainSpec::source(), 0, 32, DomainTag::Source).unwrap();
        samples[1].mask = None;
        let mut m = SegModel::new(SegConfig { width: 4 }, 0).unwrap();
        let sched = TrainSchedule {
            epochs: 1,
            iters_per_epoch: 1,
            batch_size: 2,
            lr: 1e-3,
            decay_epochs: vec![],
            decay_factor: 1.0,
        };
        assert!(matches!(
            pretrain_source(&mut m, &samples, &sched, 0),
            Err(Error::MissingLabels(_))
        ));
        assert!(matches!(
            pretrain_source(&mut m, &[], &sched, 0),
            Err(Error::MissingSourceData)
        ));
    }
}
