//! End-to-end runs on freshly generated synthetic domains.

use serde::{Deserialize, Serialize};

use crate::adapt::{self, AdaptConfig, LadderRow, SeedSetup, SweepGrid, SweepRow};
use crate::datagen::{generate_samples, DomainSpec};
use crate::error::{Error, Result};
use crate::poseprov::{OracleProvider, PoseCorruption};
use crate::priornet::{train_prior, PriorConfig, PriorModel, PriorTrainConfig};
use crate::segnet::{pretrain_source, EpochLog, SegConfig, SegModel, TrainSchedule};
use crate::types::{DomainTag, Sample, UnlabeledSet};

/// Sizes and domains of a generated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_source: usize,
    pub n_target: usize,
    /// Labelled held-out target images used only for evaluation.
    pub n_eval: usize,
    pub resolution: usize,
    pub source: DomainSpec,
    pub target: DomainSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_source: 2000,
            n_target: 2000,
            n_eval: 500,
            resolution: 64,
            source: DomainSpec::source(),
            target: DomainSpec::target(),
        }
    }
}

/// Every knob of the pipeline except the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub segnet: SegConfig,
    pub pretrain: TrainSchedule,
    pub prior: PriorConfig,
    pub prior_train: PriorTrainConfig,
    pub adapt: AdaptConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            segnet: SegConfig::default(),
            pretrain: default_pretrain(),
            prior: PriorConfig::default(),
            prior_train: PriorTrainConfig::default(),
            adapt: AdaptConfig::default(),
        }
    }
}

/// Source training used throughout: 1000 iterations with one decay.
pub fn default_pretrain() -> TrainSchedule {
    TrainSchedule {
        epochs: 20,
        iters_per_epoch: 50,
        batch_size: 16,
        lr: 3e-3,
        decay_epochs: vec![15],
        decay_factor: 10.0,
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.source.validate()?;
        self.synth.target.validate()?;
        self.pretrain.validate()?;
        self.adapt.validate()?;
        if self.prior.resolution() != self.synth.resolution {
            return Err(Error::Config(format!(
                "prior resolution {} differs from image resolution {}",
                self.prior.resolution(),
                self.synth.resolution
            )));
        }
        Ok(())
    }
}

/// Id offsets keep the three splits of one seed disjoint.
const SPLIT_STRIDE: u64 = 100_000_000;

#[derive(Debug, Clone)]
pub struct SeedData {
    pub source: Vec<Sample>,
    /// Labels are kept only to seed the pose oracle; training sees images.
    pub target: Vec<Sample>,
    pub eval: Vec<Sample>,
}

pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<SeedData> {
    let base = seed.wrapping_mul(3 * SPLIT_STRIDE);
    let r = cfg.resolution;
    Ok(SeedData {
        source: generate_samples(cfg.n_source, &cfg.source, base, r, DomainTag::Source)?,
        target: generate_samples(
            cfg.n_target,
            &cfg.target,
            base + SPLIT_STRIDE,
            r,
            DomainTag::Target,
        )?,
        eval: generate_samples(
            cfg.n_eval,
            &cfg.target,
            base + 2 * SPLIT_STRIDE,
            r,
            DomainTag::Target,
        )?,
    })
}

/// Data plus both source-trained networks of one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub data: SeedData,
    pub unlabeled: UnlabeledSet,
    pub pretrained: SegModel<f32>,
    pub prior: PriorModel<f32>,
    pub pretrain_log: Vec<EpochLog>,
    pub prior_log: Vec<EpochLog>,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    cfg.validate()?;
    let data = generate(&cfg.synth, seed)?;
    let mut pretrained = SegModel::new(cfg.segnet, seed)?;
    let pretrain_log = pretrain_source(&mut pretrained, &data.source, &cfg.pretrain, seed)?;
    let mut prior = PriorModel::new(cfg.prior, seed)?;
    let prior_log = train_prior(&mut prior, &data.source, &cfg.prior_train, seed)?;
    Ok(Prepared {
        seed,
        unlabeled: UnlabeledSet::from_samples(&data.target),
        data,
        pretrained,
        prior,
        pretrain_log,
        prior_log,
    })
}

impl Prepared {
    pub fn provider(&self, corruption: PoseCorruption) -> Result<OracleProvider> {
        OracleProvider::from_samples(&self.data.target, corruption, self.seed)
    }

    pub fn setup<'a>(&'a self, provider: &'a OracleProvider) -> SeedSetup<'a> {
        SeedSetup {
            seed: self.seed,
            pretrained: &self.pretrained,
            prior: &self.prior,
            provider,
            source: &self.data.source,
            target: &self.unlabeled,
            eval: &self.data.eval,
        }
    }
}

/// Ablation ladder over fully independent seeds.
pub fn ladder(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<LadderRow>> {
    let prepared = seeds
        .iter()
        .map(|&s| prepare(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let providers = prepared
        .iter()
        .map(|p| p.provider(cfg.adapt.pose_corruption))
        .collect::<Result<Vec<_>>>()?;
    let setups: Vec<_> = prepared
        .iter()
        .zip(&providers)
        .map(|(p, o)| p.setup(o))
        .collect();
    adapt::ablation_ladder(&setups, &cfg.adapt)
}

/// Threshold sensitivity on a single seed.
pub fn sensitivity(cfg: &ExperimentConfig, seed: u64, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let prepared = prepare(cfg, seed)?;
    let provider = prepared.provider(cfg.adapt.pose_corruption)?;
    adapt::sweep(&prepared.setup(&provider), &cfg.adapt, grid)
}
