use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use posture_core::adapt::AdaptConfig;
use posture_core::experiment::{default_pretrain, ExperimentConfig, SynthConfig};
use posture_core::priornet::{PriorConfig, PriorTrainConfig};
use posture_core::segnet::{SegConfig, TrainSchedule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// Dataset directories written by `gen`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    /// Labelled target images for per-epoch evaluation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<PathBuf>,
}

/// One experiment, as stored in a TOML file.
///
/// Relative paths are resolved against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub run_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataPaths,
    /// Generated domains used by `ablate` and `sweep`.
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub segnet: SegConfig,
    #[serde(default = "default_pretrain")]
    pub pretrain: TrainSchedule,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub prior_train: PriorTrainConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
}

impl RunConfig {
    #[cfg(test)]
    pub fn new(run_dir: PathBuf) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run_dir,
            seed: 0,
            data: DataPaths::default(),
            synth: SynthConfig::default(),
            segnet: SegConfig::default(),
            pretrain: default_pretrain(),
            prior: PriorConfig::default(),
            prior_train: PriorTrainConfig::default(),
            adapt: AdaptConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            );
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run_dir);
        for p in [
            &mut self.data.source,
            &mut self.data.target,
            &mut self.data.eval,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            synth: self.synth.clone(),
            segnet: self.segnet,
            pretrain: self.pretrain.clone(),
            prior: self.prior,
            prior_train: self.prior_train.clone(),
            adapt: self.adapt.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn require(&self, what: &str, path: &Option<PathBuf>) -> Result<PathBuf> {
        match path {
            Some(p) => Ok(p.clone()),
            None => bail!("config has no data.{what} directory"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use posture_core::adapt::LossWeights;

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = RunConfig::parse("schema_version = 1\nrun_dir = \"runs/a\"\n").unwrap();
        assert_eq!(cfg, RunConfig::new("runs/a".into()));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(
            RunConfig::parse("schema_version = 1\nrun_dir = \"r\"\nlearning_rate = 3\n").is_err()
        );
        assert!(RunConfig::parse("schema_version = 1\nrun_dir = \"r\"\n[adapt.eta]\nsource = 1.0\np2s = 1.0\nrpl = 1.0\nextra = 2\n").is_err());
    }

    #[test]
    fn shipped_config_spells_out_the_defaults() {
        let mut cfg = RunConfig::parse(include_str!("../../../configs/desk.toml")).unwrap();
        assert!(cfg.data.source.is_some() && cfg.data.target.is_some() && cfg.data.eval.is_some());
        cfg.data = DataPaths::default();
        assert_eq!(cfg, RunConfig::new("../runs/desk".into()));
    }

    #[test]
    fn wrong_schema_is_rejected() {
        assert!(RunConfig::parse("schema_version = 7\nrun_dir = \"r\"\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let mut cfg = RunConfig::new("runs/a".into());
        cfg.data.source = Some("data/src".into());
        cfg.data.eval = Some("/abs/eval".into());
        cfg.resolve(Path::new("/exp"));
        assert_eq!(cfg.run_dir, Path::new("/exp/runs/a"));
        assert_eq!(cfg.data.source.as_deref(), Some(Path::new("/exp/data/src")));
        assert_eq!(cfg.data.eval.as_deref(), Some(Path::new("/abs/eval")));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::new("r".into());
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    proptest::proptest! {
        #[test]
        fn toml_roundtrip(
            seed in proptest::prelude::any::<u64>(),
            lr in 1e-6f64..1.0,
            eta in proptest::array::uniform4(0.0f64..4.0),
            gamma in 0.0f64..1.0,
            width in 1usize..64,
            source_free in proptest::prelude::any::<bool>(),
        ) {
            let mut cfg = RunConfig::new("runs/x".into());
            cfg.seed = seed;
            cfg.adapt.schedule.lr = lr;
            cfg.adapt.eta = LossWeights { source: eta[0], p2s: eta[1], rpl: eta[2], pl: eta[3] };
            cfg.adapt.selection.gamma = gamma;
            cfg.adapt.source_free = source_free;
            cfg.segnet.width = width;
            cfg.data.eval = Some("e".into());
            let back = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
            proptest::prop_assert_eq!(back.hash(), cfg.hash());
            proptest::prop_assert_eq!(back, cfg);
        }
    }
}
