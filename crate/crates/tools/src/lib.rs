//! Audio pipeline, perceptual front end, feature extraction, calibration,
//! evaluation and synthetic data for the quality model in `csm-core`.

pub mod audio;
pub mod batch;
pub mod calibration;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod frontend;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
