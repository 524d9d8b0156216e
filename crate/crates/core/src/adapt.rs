//! Adaptation objectives and training loops.
//!
//! Every cross-entropy term is a pooled mean over the labelled pixels of the
//! images it covers; labels (confidence pseudo-labels, prior labels) are
//! built from the current prediction and then held constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::IoUReport;
use crate::nn::{self, Adam, PixelTargets};
use crate::poseprov::{PoseCorruption, PoseProvider};
use crate::priornet::PriorModel;
use crate::pseudo::{extract_pseudo_labels, score_batch, split_batch, BatchSplit, SelectionConfig};
use crate::segnet::{
    batch_gradient, evaluate, BatchSampler, SegForward, SegModel, TrainSchedule, CE_EPS,
};
use crate::types::{check_shape, HardMask, ProbMap, Sample, UnlabeledSet, IGNORE, NUM_CLASSES};

/// Weights of the individual objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Supervised source cross-entropy.
    pub source: f64,
    /// Cross-entropy against the pose prior's labels.
    pub p2s: f64,
    /// Reliability-split self-training.
    pub rpl: f64,
    /// Plain confidence-thresholded self-training.
    pub pl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            source: 1.0,
            p2s: 1.0,
            rpl: 1.0,
            pl: 0.0,
        }
    }
}

impl LossWeights {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("source", self.source),
            ("p2s", self.p2s),
            ("rpl", self.rpl),
            ("pl", self.pl),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} = {v} must be non-negative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub selection: SelectionConfig,
    pub eta: LossWeights,
    pub schedule: TrainSchedule,
    /// Drops the source term regardless of `eta.source`.
    pub source_free: bool,
    pub pose_corruption: PoseCorruption,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            selection: SelectionConfig::default(),
            eta: LossWeights::default(),
            schedule: TrainSchedule {
                epochs: 15,
                iters_per_epoch: 50,
                batch_size: 16,
                lr: 1e-4,
                decay_epochs: vec![3, 10],
                decay_factor: 10.0,
            },
            source_free: false,
            pose_corruption: PoseCorruption::adapted(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.eta.validate()?;
        self.schedule.validate()?;
        self.pose_corruption.validate()
    }

    /// Weights actually applied.
    pub fn effective_eta(&self) -> LossWeights {
        LossWeights {
            source: if self.source_free {
                0.0
            } else {
                self.eta.source
            },
            ..self.eta
        }
    }
}

/// Loss components of one optimization step, before weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub source_batch: Vec<usize>,
    pub target_batch: Vec<usize>,
    pub loss_s: f64,
    pub loss_pl: f64,
    pub loss_p2s: f64,
    pub loss_rpl: f64,
    /// Weighted sum of the components.
    pub total: f64,
    pub lambda: f64,
    pub coverage: f64,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_s: f64,
    pub loss_pl: f64,
    pub loss_p2s: f64,
    pub loss_rpl: f64,
    pub loss_total: f64,
    pub lambda_mean: f64,
    /// Fraction of target pixels carrying a self-training label.
    pub coverage: f64,
    pub target_miou: Option<f64>,
    pub per_class_iou: Option<[Option<f64>; NUM_CLASSES]>,
}

#[derive(Debug, Clone)]
pub struct AdaptRun {
    pub model: SegModel<f32>,
    pub records: Vec<MetricsRecord>,
    pub steps: Vec<StepLoss>,
}

/// Sum of clamped `−ln p[label]` and the labelled-pixel count.
fn ce_sum(pm: &ProbMap, labels: &HardMask) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for (px, &l) in pm.pixels().zip(labels.labels()) {
        if l != IGNORE {
            sum -= (px[l as usize] as f64).max(CE_EPS).ln();
            count += 1;
        }
    }
    (sum, count)
}

fn pooled(parts: impl IntoIterator<Item = (f64, usize)>) -> (f64, usize) {
    parts
        .into_iter()
        .fold((0.0, 0), |(s, c), (s2, c2)| (s + s2, c + c2))
}

fn mean_of((sum, count): (f64, usize)) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Cross-entropy against the model's own labels at `threshold`.
pub fn loss_pl(pm: &ProbMap, threshold: f64) -> f64 {
    mean_of(ce_sum(pm, &extract_pseudo_labels(pm, threshold)))
}

/// Cross-entropy against the pose prior's labels.
pub fn loss_p2s(pm: &ProbMap, prior_mask: &HardMask) -> Result<f64> {
    check_shape(pm, prior_mask)?;
    Ok(mean_of(ce_sum(pm, prior_mask)))
}

/// `λ·CE(reliable, α-labels) + (1 − λ)·CE(unreliable, β-labels)`, each a
/// pooled mean over its split; an empty split contributes 0.
pub fn loss_rpl(batch_pms: &[ProbMap], split: &BatchSplit, sel: &SelectionConfig) -> Result<f64> {
    split.validate()?;
    if split.batch_size() != batch_pms.len() {
        return Err(Error::InvalidSplit(format!(
            "split covers {} images, batch has {}",
            split.batch_size(),
            batch_pms.len()
        )));
    }
    let (rel, unrel) = rpl_parts(batch_pms, split, sel);
    Ok(split.lambda * mean_of(rel) + (1.0 - split.lambda) * mean_of(unrel))
}

fn rpl_labels(batch_pms: &[ProbMap], split: &BatchSplit, sel: &SelectionConfig) -> Vec<HardMask> {
    let mut reliable = vec![false; batch_pms.len()];
    for &i in &split.reliable_indices {
        reliable[i] = true;
    }
    batch_pms
        .iter()
        .zip(&reliable)
        .map(|(pm, &r)| extract_pseudo_labels(pm, if r { sel.alpha } else { sel.beta }))
        .collect()
}

fn rpl_parts(
    batch_pms: &[ProbMap],
    split: &BatchSplit,
    sel: &SelectionConfig,
) -> ((f64, usize), (f64, usize)) {
    let labels = rpl_labels(batch_pms, split, sel);
    let rel = pooled(
        split
            .reliable_indices
            .iter()
            .map(|&i| ce_sum(&batch_pms[i], &labels[i])),
    );
    let unrel = pooled(
        split
            .unreliable_indices
            .iter()
            .map(|&i| ce_sum(&batch_pms[i], &labels[i])),
    );
    (rel, unrel)
}

/// Prior labels for every target image; IGNORE everywhere when the
/// estimator finds no joint at all.
pub fn target_priors(
    prior: &PriorModel<f32>,
    provider: &dyn PoseProvider,
    target: &UnlabeledSet,
) -> Result<Vec<HardMask>> {
    let entries: Vec<_> = target.iter().collect();
    exec::map(&entries, |&(id, image)| -> Result<HardMask> {
        let kp = provider.estimate(id, image)?;
        let n = prior.resolution();
        if image.height() != n || image.width() != n {
            return Err(Error::shape(
                format!("{n}x{n} target images"),
                format!("{}x{}", image.height(), image.width()),
            ));
        }
        if kp.visible.iter().any(|&v| v) {
            Ok(prior.pseudo_labels(&kp))
        } else {
            Ok(HardMask::filled(n, n, IGNORE))
        }
    })
    .into_iter()
    .collect()
}

fn forward_all(
    model: &SegModel<f32>,
    images: &[&crate::types::Image],
) -> Result<Vec<SegForward<f32>>> {
    exec::map(images, |img| model.forward(img))
        .into_iter()
        .collect()
}

const TARGET_STREAM: u64 = 0x7a67_e700_0000_0000;

struct Loop<'a> {
    source: Option<(&'a [Sample], Vec<&'a HardMask>)>,
    target: &'a UnlabeledSet,
    priors: Vec<HardMask>,
    eval: Option<&'a [Sample]>,
    cfg: &'a AdaptConfig,
    eta: LossWeights,
    seed: u64,
}

impl Loop<'_> {
    fn run(&self, mut model: SegModel<f32>) -> Result<AdaptRun> {
        let cfg = self.cfg;
        let sched = &cfg.schedule;
        let b = sched.batch_size;
        let eta = self.eta;
        let sel = &cfg.selection;
        let mut target_sampler = BatchSampler::new(self.target.len(), self.seed ^ TARGET_STREAM)?;
        let mut source_sampler = match &self.source {
            Some((s, _)) => Some(BatchSampler::new(s.len(), self.seed)?),
            None => None,
        };
        let mut opt = Adam::new(model.num_params());
        let mut records = Vec::with_capacity(sched.epochs);
        let mut steps = Vec::with_capacity(sched.epochs * sched.iters_per_epoch);
        for epoch in 0..sched.epochs {
            let lr = sched.lr_at(epoch);
            let first = steps.len();
            for _ in 0..sched.iters_per_epoch {
                let step = self.step(
                    &mut model,
                    &mut opt,
                    lr,
                    &mut target_sampler,
                    source_sampler.as_mut(),
                    b,
                    eta,
                    sel,
                )?;
                steps.push(StepLoss {
                    step: steps.len(),
                    ..step
                });
            }
            let window = &steps[first..];
            let avg =
                |f: fn(&StepLoss) -> f64| window.iter().map(f).sum::<f64>() / window.len() as f64;
            let report: Option<IoUReport> = match self.eval {
                Some(e) => Some(evaluate(&model, e)?),
                None => None,
            };
            records.push(MetricsRecord {
                epoch,
                lr,
                loss_s: avg(|s| s.loss_s),
                loss_pl: avg(|s| s.loss_pl),
                loss_p2s: avg(|s| s.loss_p2s),
                loss_rpl: avg(|s| s.loss_rpl),
                loss_total: avg(|s| s.total),
                lambda_mean: avg(|s| s.lambda),
                coverage: avg(|s| s.coverage),
                target_miou: report.as_ref().map(|r| r.mean),
                per_class_iou: report.map(|r| r.per_class),
            });
        }
        Ok(AdaptRun {
            model,
            records,
            steps,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        model: &mut SegModel<f32>,
        opt: &mut Adam,
        lr: f64,
        target_sampler: &mut BatchSampler,
        source_sampler: Option<&mut BatchSampler>,
        b: usize,
        eta: LossWeights,
        sel: &SelectionConfig,
    ) -> Result<StepLoss> {
        let target_batch = target_sampler.next_batch(b);
        let images: Vec<_> = target_batch.iter().map(|&i| self.target.get(i).1).collect();
        let t_fwd = forward_all(model, &images)?;
        let pms: Vec<ProbMap> = t_fwd.iter().map(|f| f.prob_map()).collect();
        let priors: Vec<&HardMask> = target_batch.iter().map(|&i| &self.priors[i]).collect();

        // Labels are built from the current prediction and frozen.
        let scores = score_batch(&pms, &priors.iter().map(|&m| m.clone()).collect::<Vec<_>>())?;
        let split = split_batch(&scores, sel.gamma);
        let rpl_labels = rpl_labels(&pms, &split, sel);
        let pl_labels: Vec<HardMask> = pms
            .iter()
            .map(|pm| extract_pseudo_labels(pm, sel.tau))
            .collect();

        let p2s = pooled(pms.iter().zip(&priors).map(|(pm, m)| ce_sum(pm, m)));
        let pl = pooled(pms.iter().zip(&pl_labels).map(|(pm, m)| ce_sum(pm, m)));
        let rel = pooled(
            split
                .reliable_indices
                .iter()
                .map(|&i| ce_sum(&pms[i], &rpl_labels[i])),
        );
        let unrel = pooled(
            split
                .unreliable_indices
                .iter()
                .map(|&i| ce_sum(&pms[i], &rpl_labels[i])),
        );
        let lambda = split.lambda;
        let loss_rpl = lambda * mean_of(rel) + (1.0 - lambda) * mean_of(unrel);
        let pixels: usize = pms.iter().map(|pm| pm.len()).sum();
        let coverage = (rel.1 + unrel.1) as f64 / pixels as f64;

        let scale = |w: f64, count: usize| {
            if count == 0 {
                0.0
            } else {
                (w / count as f64) as f32
            }
        };
        let s_p2s = scale(eta.p2s, p2s.1);
        let s_pl = scale(eta.pl, pl.1);
        let s_rel = scale(eta.rpl * lambda, rel.1);
        let s_unrel = scale(eta.rpl * (1.0 - lambda), unrel.1);
        let mut reliable = vec![false; b];
        for &i in &split.reliable_indices {
            reliable[i] = true;
        }
        let t_terms: Vec<Vec<PixelTargets<f32>>> = (0..b)
            .map(|j| {
                let s_r = if reliable[j] { s_rel } else { s_unrel };
                [
                    (priors[j].labels(), s_p2s),
                    (rpl_labels[j].labels(), s_r),
                    (pl_labels[j].labels(), s_pl),
                ]
                .into_iter()
                .filter(|&(_, s)| s != 0.0)
                .map(|(labels, scale)| PixelTargets { labels, scale })
                .collect()
            })
            .collect();

        let mut source_batch = Vec::new();
        let mut loss_s = 0.0;
        let mut grad = vec![0.0f32; model.num_params()];
        if let (Some((source, masks)), Some(sampler)) = (&self.source, source_sampler) {
            source_batch = sampler.next_batch(b);
            if eta.source > 0.0 {
                let s_images: Vec<_> = source_batch.iter().map(|&i| &source[i].image).collect();
                let s_fwd = forward_all(model, &s_images)?;
                let ls = pooled(
                    s_fwd
                        .iter()
                        .zip(&source_batch)
                        .map(|(f, &i)| ce_sum(&f.prob_map(), masks[i])),
                );
                loss_s = mean_of(ls);
                let s_s = scale(eta.source, ls.1);
                let s_terms: Vec<Vec<PixelTargets<f32>>> = source_batch
                    .iter()
                    .map(|&i| {
                        vec![PixelTargets {
                            labels: masks[i].labels(),
                            scale: s_s,
                        }]
                    })
                    .collect();
                grad = batch_gradient(model, &s_fwd, &s_terms);
            }
        }
        if t_terms.iter().any(|t| !t.is_empty()) {
            nn::add_into(&mut grad, &batch_gradient(model, &t_fwd, &t_terms));
        }
        let active =
            eta.source > 0.0 && self.source.is_some() || t_terms.iter().any(|t| !t.is_empty());
        if active {
            opt.step(model.params_mut(), &grad, lr);
        }

        let loss_p2s = mean_of(p2s);
        let loss_pl = mean_of(pl);
        Ok(StepLoss {
            step: 0,
            source_batch,
            target_batch,
            loss_s,
            loss_pl,
            loss_p2s,
            loss_rpl,
            total: eta.source * loss_s + eta.p2s * loss_p2s + eta.rpl * loss_rpl + eta.pl * loss_pl,
            lambda,
            coverage,
        })
    }
}

fn source_masks(source: &[Sample]) -> Result<Vec<&HardMask>> {
    source
        .iter()
        .map(|s| s.mask.as_ref().ok_or(Error::MissingLabels(s.id)))
        .collect()
}

/// Adaptation with labelled source data: `η1·L_S + η2·L_p2s + η3·L_Rpl`
/// (plus `η_pl·L_pl` when configured). Returns the last-epoch model.
#[allow(clippy::too_many_arguments)]
pub fn adapt_posture(
    model: SegModel<f32>,
    prior: &PriorModel<f32>,
    provider: &dyn PoseProvider,
    source: &[Sample],
    target: &UnlabeledSet,
    eval: Option<&[Sample]>,
    cfg: &AdaptConfig,
    seed: u64,
) -> Result<AdaptRun> {
    cfg.validate()?;
    if cfg.source_free {
        return Err(Error::Config("source_free runs go through adapt_sf".into()));
    }
    if source.is_empty() {
        return Err(Error::MissingSourceData);
    }
    if target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let masks = source_masks(source)?;
    Loop {
        source: Some((source, masks)),
        target,
        priors: target_priors(prior, provider, target)?,
        eval,
        cfg,
        eta: cfg.effective_eta(),
        seed,
    }
    .run(model)
}

/// Source-free adaptation: the same loop with no source term. Only the
/// pretrained model and the prior carry source knowledge.
pub fn adapt_sf(
    model: SegModel<f32>,
    prior: &PriorModel<f32>,
    provider: &dyn PoseProvider,
    target: &UnlabeledSet,
    eval: Option<&[Sample]>,
    cfg: &AdaptConfig,
    seed: u64,
) -> Result<AdaptRun> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eta = LossWeights {
        source: 0.0,
        ..cfg.eta
    };
    Loop {
        source: None,
        target,
        priors: target_priors(prior, provider, target)?,
        eval,
        cfg,
        eta,
        seed,
    }
    .run(model)
}

/// One configuration of the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rung {
    pub name: &'static str,
    /// `None` evaluates the pretrained model without further training.
    pub eta: Option<LossWeights>,
}

pub const LADDER: [Rung; 5] = [
    Rung {
        name: "L_S",
        eta: None,
    },
    Rung {
        name: "L_S + L_pl",
        eta: Some(LossWeights {
            source: 1.0,
            p2s: 0.0,
            rpl: 0.0,
            pl: 1.0,
        }),
    },
    Rung {
        name: "L_p2s",
        eta: Some(LossWeights {
            source: 0.0,
            p2s: 1.0,
            rpl: 0.0,
            pl: 0.0,
        }),
    },
    Rung {
        name: "L_S + L_pl + L_p2s",
        eta: Some(LossWeights {
            source: 1.0,
            p2s: 1.0,
            rpl: 0.0,
            pl: 1.0,
        }),
    },
    Rung {
        name: "L_S + L_p2s + L_Rpl",
        eta: Some(LossWeights {
            source: 1.0,
            p2s: 1.0,
            rpl: 1.0,
            pl: 0.0,
        }),
    },
];

/// Everything one seed of an experiment needs.
pub struct SeedSetup<'a> {
    pub seed: u64,
    pub pretrained: &'a SegModel<f32>,
    pub prior: &'a PriorModel<f32>,
    pub provider: &'a dyn PoseProvider,
    pub source: &'a [Sample],
    pub target: &'a UnlabeledSet,
    pub eval: &'a [Sample],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub name: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

fn final_miou(run: &AdaptRun, eval: &[Sample]) -> Result<f64> {
    match run.records.last().and_then(|r| r.target_miou) {
        Some(m) => Ok(m),
        None => Ok(evaluate(&run.model, eval)?.mean),
    }
}

/// Target mIoU of one configuration on one seed, evaluated only at the end.
pub fn run_rung(
    setup: &SeedSetup<'_>,
    base: &AdaptConfig,
    eta: Option<LossWeights>,
) -> Result<f64> {
    let Some(eta) = eta else {
        return Ok(evaluate(setup.pretrained, setup.eval)?.mean);
    };
    let cfg = AdaptConfig {
        eta,
        ..base.clone()
    };
    let run = if cfg.source_free {
        adapt_sf(
            setup.pretrained.clone(),
            setup.prior,
            setup.provider,
            setup.target,
            None,
            &cfg,
            setup.seed,
        )?
    } else {
        adapt_posture(
            setup.pretrained.clone(),
            setup.prior,
            setup.provider,
            setup.source,
            setup.target,
            None,
            &cfg,
            setup.seed,
        )?
    };
    final_miou(&run, setup.eval)
}

/// Mean target mIoU of every ladder rung over the given seeds.
pub fn ablation_ladder(setups: &[SeedSetup<'_>], base: &AdaptConfig) -> Result<Vec<LadderRow>> {
    if setups.len() < 3 {
        return Err(Error::Config(format!(
            "ablation needs at least 3 seeds, got {}",
            setups.len()
        )));
    }
    LADDER
        .iter()
        .map(|rung| {
            let per_seed = setups
                .iter()
                .map(|s| run_rung(s, base, rung.eta))
                .collect::<Result<Vec<_>>>()?;
            let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
            Ok(LadderRow {
                name: rung.name.to_string(),
                per_seed,
                mean,
            })
        })
        .collect()
}

/// One-at-a-time sensitivity grid over the selection thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha_beta: Vec<(f64, f64)>,
    pub gamma: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            alpha_beta: vec![
                (0.95, 0.95),
                (0.85, 0.95),
                (0.75, 0.85),
                (0.70, 0.85),
                (0.65, 0.75),
            ],
            gamma: vec![0.10, 0.20, 0.25, 0.30, 0.40],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub miou: f64,
}

/// Varies α/β at the base γ, then γ at the base α/β.
pub fn sweep(setup: &SeedSetup<'_>, base: &AdaptConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let sel = base.selection;
    let mut points: Vec<SelectionConfig> = grid
        .alpha_beta
        .iter()
        .map(|&(alpha, beta)| SelectionConfig { alpha, beta, ..sel })
        .collect();
    points.extend(
        grid.gamma
            .iter()
            .map(|&gamma| SelectionConfig { gamma, ..sel }),
    );
    let mut rows: Vec<SweepRow> = Vec::with_capacity(points.len());
    for s in points {
        s.validate()?;
        let cached = rows
            .iter()
            .find(|r| r.alpha == s.alpha && r.beta == s.beta && r.gamma == s.gamma)
            .map(|r| r.miou);
        let miou = match cached {
            Some(m) => m,
            None => run_rung(
                setup,
                &AdaptConfig {
                    selection: s,
                    ..base.clone()
                },
                Some(base.eta),
            )?,
        };
        rows.push(SweepRow {
            alpha: s.alpha,
            beta: s.beta,
            gamma: s.gamma,
            miou,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(pixels: &[[f32; NUM_CLASSES]]) -> ProbMap {
        ProbMap::new(1, pixels.len(), pixels.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn loss_pl_hand_case() {
        let m = pm(&[
            [0.9, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.6, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0],
        ]);
        assert!((loss_pl(&m, 0.8) + 0.9f64.ln()).abs() < 1e-6);
        assert_eq!(loss_pl(&m, 0.95), 0.0);
    }

    #[test]
    fn loss_pl_of_one_hot_is_zero() {
        let m = ProbMap::one_hot(&HardMask::new(1, 3, vec![0, 5, 2]).unwrap());
        assert!(loss_pl(&m, 1.0).abs() < 1e-6);
    }

    #[test]
    fn loss_p2s_cases() {
        let prior = HardMask::new(1, 2, vec![1, 6]).unwrap();
        assert!(loss_p2s(&ProbMap::one_hot(&prior), &prior).unwrap().abs() < 1e-6);
        assert!((loss_p2s(&ProbMap::uniform(1, 2), &prior).unwrap() - 7f64.ln()).abs() < 1e-6);
        assert_eq!(
            loss_p2s(&ProbMap::uniform(1, 2), &HardMask::filled(1, 2, IGNORE)).unwrap(),
            0.0
        );
        assert!(loss_p2s(&ProbMap::uniform(1, 3), &prior).is_err());
    }

    #[test]
    fn loss_rpl_rejects_foreign_split() {
        let pms = vec![ProbMap::uniform(1, 1); 2];
        let split = split_batch(&[0.5, 0.5, 0.5], 0.25);
        assert!(matches!(
            loss_rpl(&pms, &split, &SelectionConfig::default()),
            Err(Error::InvalidSplit(_))
        ));
    }

    #[test]
    fn effective_eta_drops_source_when_source_free() {
        let cfg = AdaptConfig {
            source_free: true,
            ..Default::default()
        };
        assert_eq!(cfg.effective_eta().source, 0.0);
        assert_eq!(AdaptConfig::default().effective_eta().source, 1.0);
    }
}
