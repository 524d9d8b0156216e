//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/images/000000.png      RGB8
//! <dir>/masks/000000.png       L8, 255 = ignore
//! <dir>/keypoints/000000.json  {"coords": [[x, y]; 14], "visible": [bool; 14]}
//! ```
//!
//! File stems are positions in the manifest's `ids` list.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::datagen::DomainSpec;
use crate::error::{Error, Result};
use crate::exec;
use crate::types::{DomainTag, HardMask, Image, KeypointSet, Sample};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub count: usize,
    pub resolution: usize,
    pub seed: u64,
    pub domain: DomainTag,
    pub domain_spec: DomainSpec,
    pub ids: Vec<u64>,
}

fn format_err(path: &Path, message: impl ToString) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn stem(index: usize) -> String {
    format!("{index:06}")
}

fn paths(dir: &Path, index: usize) -> (PathBuf, PathBuf, PathBuf) {
    let s = stem(index);
    (
        dir.join("images").join(format!("{s}.png")),
        dir.join("masks").join(format!("{s}.png")),
        dir.join("keypoints").join(format!("{s}.json")),
    )
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes samples of one resolution; masks and keypoints are optional per
/// sample.
pub fn write_dataset(
    dir: &Path,
    samples: &[Sample],
    domain_spec: &DomainSpec,
    seed: u64,
    domain: DomainTag,
) -> Result<Manifest> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let resolution = first.image.height();
    for sub in ["images", "masks", "keypoints"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let written = exec::map_range(samples.len(), |i| -> Result<()> {
        let s = &samples[i];
        let (h, w) = (s.image.height(), s.image.width());
        if h != resolution || w != resolution {
            return Err(Error::shape(
                format!("{resolution}x{resolution}"),
                format!("{h}x{w}"),
            ));
        }
        let (img_path, mask_path, kp_path) = paths(dir, i);
        let rgb: Vec<u8> = s.image.pixels().iter().map(|&v| to_u8(v)).collect();
        RgbImage::from_raw(w as u32, h as u32, rgb)
            .expect("buffer length matches")
            .save(&img_path)?;
        if let Some(mask) = &s.mask {
            GrayImage::from_raw(w as u32, h as u32, mask.labels().to_vec())
                .expect("buffer length matches")
                .save(&mask_path)?;
        }
        if let Some(kp) = &s.keypoints {
            fs::write(&kp_path, serde_json::to_vec(kp)?)?;
        }
        Ok(())
    });
    written.into_iter().collect::<Result<Vec<()>>>()?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        count: samples.len(),
        resolution,
        seed,
        domain,
        domain_spec: domain_spec.clone(),
        ids: samples.iter().map(|s| s.id).collect(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| format_err(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| format_err(&path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(format_err(
            &path,
            format!("format_version {} unsupported", manifest.format_version),
        ));
    }
    if manifest.ids.len() != manifest.count {
        return Err(format_err(&path, "ids length differs from count"));
    }
    Ok(manifest)
}

/// Loads every sample; masks and keypoints are attached when present.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let manifest = read_manifest(dir)?;
    let res = manifest.resolution;
    let loaded = exec::map_range(manifest.count, |i| -> Result<Sample> {
        let (img_path, mask_path, kp_path) = paths(dir, i);
        let rgb = image::open(&img_path)
            .map_err(|e| format_err(&img_path, e))?
            .to_rgb8();
        if rgb.width() as usize != res || rgb.height() as usize != res {
            return Err(format_err(&img_path, "resolution differs from manifest"));
        }
        let pixels = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        let image = Image::new(res, res, pixels)?;
        let mask = if mask_path.exists() {
            let gray = image::open(&mask_path)
                .map_err(|e| format_err(&mask_path, e))?
                .to_luma8();
            if gray.width() as usize != res || gray.height() as usize != res {
                return Err(format_err(&mask_path, "resolution differs from manifest"));
            }
            Some(HardMask::new(res, res, gray.into_raw()).map_err(|e| format_err(&mask_path, e))?)
        } else {
            None
        };
        let keypoints = if kp_path.exists() {
            let kp: KeypointSet = serde_json::from_slice(&fs::read(&kp_path)?)
                .map_err(|e| format_err(&kp_path, e))?;
            Some(KeypointSet::new(kp.coords, kp.visible).map_err(|e| format_err(&kp_path, e))?)
        } else {
            None
        };
        Ok(Sample {
            id: manifest.ids[i],
            image,
            mask,
            keypoints,
            domain: manifest.domain,
        })
    });
    let samples = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}
