//! Pose-guided unsupervised domain adaptation for body-part segmentation.
//!
//! The crate covers synthetic two-domain data generation, IoU metrics,
//! pseudo-label selection, a pose-to-segmentation prior network, a
//! simulated pose estimator, an encoder-decoder segmenter and the
//! adaptation loops that tie them together.

pub mod adapt;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod poseprov;
pub mod priornet;
pub mod pseudo;
pub mod segnet;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
