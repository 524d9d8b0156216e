//! Domain types shared by every stage of the pipeline.
//!
//! Layouts are fixed: images are row-major `H×W×3`, probability maps are
//! row-major `H×W×K` with the class axis contiguous, masks are one byte
//! per pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of body-part classes.
pub const NUM_CLASSES: usize = 7;

/// Reserved mask value that excludes a pixel from losses and metrics.
pub const IGNORE: u8 = 255;

/// Number of joints in a [`KeypointSet`].
pub const NUM_JOINTS: usize = 14;

/// Tolerance of the per-pixel simplex check in [`validate_probmap`].
pub const NORMALIZATION_TOL: f64 = 1e-5;

/// The seven-part label set, background first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum BodyPart {
    Background = 0,
    Head = 1,
    Torso = 2,
    LeftHand = 3,
    RightHand = 4,
    LeftLeg = 5,
    RightLeg = 6,
}

pub struct ClassTable;

impl ClassTable {
    pub const NAMES: [&'static str; NUM_CLASSES] = ["BG", "HD", "TR", "LH", "RH", "LL", "RL"];
    pub const PARTS: [BodyPart; NUM_CLASSES] = [
        BodyPart::Background,
        BodyPart::Head,
        BodyPart::Torso,
        BodyPart::LeftHand,
        BodyPart::RightHand,
        BodyPart::LeftLeg,
        BodyPart::RightLeg,
    ];

    pub fn len() -> usize {
        NUM_CLASSES
    }

    pub fn name(class: usize) -> &'static str {
        Self::NAMES[class]
    }
}

/// Joint ordering used by every keypoint set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Joint {
    HeadTop = 0,
    Neck = 1,
    LeftShoulder = 2,
    RightShoulder = 3,
    LeftElbow = 4,
    RightElbow = 5,
    LeftWrist = 6,
    RightWrist = 7,
    LeftHip = 8,
    RightHip = 9,
    LeftKnee = 10,
    RightKnee = 11,
    LeftAnkle = 12,
    RightAnkle = 13,
}

impl Joint {
    /// The 14 joints in storage order.
    pub const ALL: [Joint; NUM_JOINTS] = [
        Joint::HeadTop,
        Joint::Neck,
        Joint::LeftShoulder,
        Joint::RightShoulder,
        Joint::LeftElbow,
        Joint::RightElbow,
        Joint::LeftWrist,
        Joint::RightWrist,
        Joint::LeftHip,
        Joint::RightHip,
        Joint::LeftKnee,
        Joint::RightKnee,
        Joint::LeftAnkle,
        Joint::RightAnkle,
    ];

    /// Left/right joint index pairs.
    pub const LR_PAIRS: [(usize, usize); 6] = [(2, 3), (4, 5), (6, 7), (8, 9), (10, 11), (12, 13)];

    /// Body part whose mask region the joint belongs to.
    pub fn owner(index: usize) -> BodyPart {
        match index {
            0 => BodyPart::Head,
            1 => BodyPart::Torso,
            2 | 4 | 6 => BodyPart::LeftHand,
            3 | 5 | 7 => BodyPart::RightHand,
            8 | 10 | 12 => BodyPart::LeftLeg,
            _ => BodyPart::RightLeg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::shape(
                format!("{}x{}x3", height, width),
                format!("{} values", pixels.len()),
            ));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Channel-major copy (`3×H×W`), the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0; 3 * n];
        for (p, rgb) in self.pixels.chunks_exact(3).enumerate() {
            out[p] = rgb[0];
            out[n + p] = rgb[1];
            out[2 * n + p] = rgb[2];
        }
        out
    }

    pub(crate) fn from_raw(height: usize, width: usize, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * 3);
        Self {
            height,
            width,
            pixels,
        }
    }
}

/// Per-pixel class distribution, `H×W×K` with the class axis contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    probs: Vec<f32>,
}

impl ProbMap {
    /// Builds a map and checks the simplex invariant.
    pub fn new(height: usize, width: usize, probs: Vec<f32>) -> Result<Self> {
        let pm = Self::new_unchecked(height, width, probs)?;
        validate_probmap(&pm)?;
        Ok(pm)
    }

    /// Builds a map checking only the buffer length.
    pub fn new_unchecked(height: usize, width: usize, probs: Vec<f32>) -> Result<Self> {
        if probs.len() != height * width * NUM_CLASSES {
            return Err(Error::shape(
                format!("{}x{}x{}", height, width, NUM_CLASSES),
                format!("{} values", probs.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            probs,
        })
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            probs: vec![1.0 / NUM_CLASSES as f32; height * width * NUM_CLASSES],
        }
    }

    /// One-hot encoding of a mask. IGNORE pixels become uniform.
    pub fn one_hot(mask: &HardMask) -> Self {
        let mut probs = vec![0.0; mask.len() * NUM_CLASSES];
        for (p, &l) in mask.labels().iter().enumerate() {
            let px = &mut probs[p * NUM_CLASSES..(p + 1) * NUM_CLASSES];
            if l == IGNORE {
                px.fill(1.0 / NUM_CLASSES as f32);
            } else {
                px[l as usize] = 1.0;
            }
        }
        Self {
            height: mask.height(),
            width: mask.width(),
            probs,
        }
    }

    /// Softmax over channel-major logits (`K×H×W`).
    pub fn from_logits_chw(height: usize, width: usize, logits: &[f32]) -> Self {
        let n = height * width;
        debug_assert_eq!(logits.len(), n * NUM_CLASSES);
        let mut probs = vec![0.0f32; n * NUM_CLASSES];
        for p in 0..n {
            let mut max = f32::NEG_INFINITY;
            for k in 0..NUM_CLASSES {
                max = max.max(logits[k * n + p]);
            }
            let px = &mut probs[p * NUM_CLASSES..(p + 1) * NUM_CLASSES];
            let mut sum = 0.0;
            for k in 0..NUM_CLASSES {
                let e = (logits[k * n + p] - max).exp();
                px[k] = e;
                sum += e;
            }
            for v in px.iter_mut() {
                *v /= sum;
            }
        }
        Self {
            height,
            width,
            probs,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.probs[index * NUM_CLASSES..(index + 1) * NUM_CLASSES]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f32]> {
        self.probs.chunks_exact(NUM_CLASSES)
    }
}

/// Checks that every pixel of `pm` lies on the probability simplex.
pub fn validate_probmap(pm: &ProbMap) -> Result<()> {
    let mut worst: Option<(usize, f64, f64)> = None;
    for (i, px) in pm.pixels().enumerate() {
        let negative = px.iter().any(|&v| v < 0.0 || !v.is_finite());
        let sum: f64 = px.iter().map(|&v| v as f64).sum();
        let deviation = if negative {
            f64::INFINITY
        } else {
            (sum - 1.0).abs()
        };
        if deviation > NORMALIZATION_TOL && worst.is_none_or(|(_, _, d)| deviation > d) {
            worst = Some((i, sum, deviation));
        }
    }
    match worst {
        None => Ok(()),
        Some((i, sum, deviation)) => Err(Error::Normalization {
            x: i % pm.width,
            y: i / pm.width,
            sum,
            deviation,
        }),
    }
}

/// Index of the largest value, ties resolved toward the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Per-pixel argmax of a probability map.
pub fn argmax_mask(pm: &ProbMap) -> HardMask {
    let labels = pm.pixels().map(|px| argmax(px) as u8).collect();
    HardMask {
        height: pm.height,
        width: pm.width,
        labels,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HardMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl HardMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(
                format!("{}x{}", height, width),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some((index, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l != IGNORE && l as usize >= NUM_CLASSES)
        {
            return Err(Error::InvalidLabel { label, index });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn contains_ignore(&self) -> bool {
        self.labels.contains(&IGNORE)
    }

    /// Number of pixels that are not IGNORE.
    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE).count()
    }

    /// Horizontal flip with left/right classes exchanged.
    pub fn mirrored(&self) -> Self {
        let swap = |l: u8| match l {
            3 => 4,
            4 => 3,
            5 => 6,
            6 => 5,
            other => other,
        };
        let mut labels = Vec::with_capacity(self.labels.len());
        for row in self.labels.chunks_exact(self.width) {
            labels.extend(row.iter().rev().map(|&l| swap(l)));
        }
        Self::from_raw(self.height, self.width, labels)
    }

    pub(crate) fn from_raw(height: usize, width: usize, labels: Vec<u8>) -> Self {
        Self {
            height,
            width,
            labels,
        }
    }

    pub(crate) fn check_same_shape(&self, other: &HardMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }
}

pub(crate) fn check_shape(pm: &ProbMap, mask: &HardMask) -> Result<()> {
    if pm.height() != mask.height() || pm.width() != mask.width() {
        return Err(Error::shape(
            format!("{}x{}", pm.height(), pm.width()),
            format!("{}x{}", mask.height(), mask.width()),
        ));
    }
    Ok(())
}

/// 14 joints in normalized `(x, y)` image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub coords: [[f32; 2]; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
}

impl KeypointSet {
    pub fn new(coords: [[f32; 2]; NUM_JOINTS], visible: [bool; NUM_JOINTS]) -> Result<Self> {
        for (i, c) in coords.iter().enumerate() {
            if visible[i] && !c.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(Error::Geometry(format!(
                    "visible joint {i} at ({}, {}) outside the unit square",
                    c[0], c[1]
                )));
            }
        }
        Ok(Self { coords, visible })
    }

    /// Network input: `(x, y, visibility)` per joint, invisible joints at the origin.
    pub fn encode(&self) -> [f32; NUM_JOINTS * 3] {
        let mut out = [0.0; NUM_JOINTS * 3];
        for j in 0..NUM_JOINTS {
            if self.visible[j] {
                out[3 * j] = self.coords[j][0];
                out[3 * j + 1] = self.coords[j][1];
                out[3 * j + 2] = 1.0;
            }
        }
        out
    }

    /// Horizontal mirror with left/right joints swapped.
    pub fn mirrored(&self) -> Self {
        let mut out = *self;
        for j in 0..NUM_JOINTS {
            out.coords[j][0] = 1.0 - self.coords[j][0];
        }
        for &(l, r) in &Joint::LR_PAIRS {
            out.coords.swap(l, r);
            out.visible.swap(l, r);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub image: Image,
    pub mask: Option<HardMask>,
    pub keypoints: Option<KeypointSet>,
    pub domain: DomainTag,
}

/// A group of same-sized samples.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    samples: Vec<&'a Sample>,
}

impl<'a> Batch<'a> {
    pub fn new(samples: Vec<&'a Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let (h, w) = (first.image.height(), first.image.width());
        if let Some(s) = samples
            .iter()
            .find(|s| s.image.height() != h || s.image.width() != w)
        {
            return Err(Error::shape(
                format!("{h}x{w}"),
                format!("{}x{}", s.image.height(), s.image.width()),
            ));
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[&'a Sample] {
        &self.samples
    }
}

/// Target images with every label stripped; all the adaptation loop may see.
#[derive(Debug, Clone)]
pub struct UnlabeledSet {
    entries: Vec<(u64, Image)>,
}

impl UnlabeledSet {
    pub fn from_samples(samples: &[Sample]) -> Self {
        Self {
            entries: samples.iter().map(|s| (s.id, s.image.clone())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> (u64, &Image) {
        let (id, img) = &self.entries[index];
        (*id, img)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Image)> {
        self.entries.iter().map(|(id, img)| (*id, img))
    }
}
