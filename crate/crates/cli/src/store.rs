//! Run directories, checkpoints and logs.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context, Result};
use posture_core::priornet::{PriorConfig, PriorModel};
use posture_core::segnet::{SegConfig, SegModel};
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_FORMAT: u32 = 1;
const MAGIC: &[u8; 4] = b"PSTR";

/// Exclusive hold on a run directory for the lifetime of the value.
pub struct RunLock {
    _file: File,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
        let path = run_dir.join(".lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(fs::TryLockError::WouldBlock) => {
                bail!(
                    "run directory {} is locked by another process",
                    run_dir.display()
                )
            }
            Err(fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }
}

/// Creates a fresh output directory, replacing an old one only with `force`.
pub fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = dir.is_file() || fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            bail!(
                "{} already exists; pass --force to overwrite",
                dir.display()
            );
        }
        if dir.is_dir() {
            fs::remove_dir_all(dir)?;
        } else {
            fs::remove_file(dir)?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Segnet(SegConfig),
    Prior(PriorConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub architecture: Architecture,
    pub num_params: usize,
    /// Number of completed training epochs.
    pub epoch: usize,
    pub config_hash: String,
    pub git_describe: String,
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Accepts either the parameter file or its sidecar.
fn bin_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.with_extension("bin")
    } else {
        path.to_path_buf()
    }
}

pub fn save_checkpoint(path: &Path, params: &[f32], sidecar: &Sidecar) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + 4 * params.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_FORMAT.to_le_bytes());
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(sidecar)? + "\n")
        .with_context(|| format!("writing {}", side.display()))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Sidecar, Vec<f32>)> {
    let bin = bin_path(path);
    let side = sidecar_path(&bin);
    let sidecar: Sidecar = serde_json::from_str(
        &fs::read_to_string(&side).with_context(|| format!("reading {}", side.display()))?,
    )
    .with_context(|| format!("parsing {}", side.display()))?;
    if sidecar.format_version != CHECKPOINT_FORMAT {
        bail!(
            "{}: unsupported checkpoint format {}",
            side.display(),
            sidecar.format_version
        );
    }
    let bytes = fs::read(&bin).with_context(|| format!("reading {}", bin.display()))?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        bail!("{} is not a checkpoint", bin.display());
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * n || n != sidecar.num_params {
        bail!("{}: truncated or mismatched parameter block", bin.display());
    }
    let params = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((sidecar, params))
}

pub fn load_segnet(path: &Path) -> Result<SegModel<f32>> {
    match load_checkpoint(path)? {
        (
            Sidecar {
                architecture: Architecture::Segnet(cfg),
                ..
            },
            params,
        ) => Ok(SegModel::from_params(cfg, params)?),
        _ => bail!("{} is not a segmentation checkpoint", path.display()),
    }
}

pub fn load_prior(path: &Path) -> Result<PriorModel<f32>> {
    match load_checkpoint(path)? {
        (
            Sidecar {
                architecture: Architecture::Prior(cfg),
                ..
            },
            params,
        ) => Ok(PriorModel::from_params(cfg, params)?),
        _ => bail!("{} is not a prior checkpoint", path.display()),
    }
}

/// Line-delimited JSON, opened for appending only.
pub struct MetricsLog {
    file: File,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self { file })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<serde_json::Value>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line?;
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
