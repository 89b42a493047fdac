//! Cognitive salience model for full-reference audio quality measurement.
//!
//! This crate holds the parts of the model that need nothing but numbers:
//! the serializable [`CsmModel`], inference from per-frame distortion and
//! cognitive-effect series to a quality score, the correlation measures used
//! to quantify distortion salience and cognitive interactions, and the
//! regression machinery (monotone MARS basis functions, detection probability
//! weight search) used during calibration.
//!
//! The crate is `no_std` and only needs `alloc`. Signal processing, file
//! formats and the command line live in `csm-tools`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod features;
pub mod inference;
pub mod interaction;
pub mod linalg;
pub mod mars;
pub mod model;
pub mod stats;

pub use error::{CoreError, Result};
pub use features::FeatureSeries;
pub use inference::{quality_terms, score, Score, TermMatrix};
pub use interaction::{
    compute_salience, interaction_metric, optimize_composite_dpw, optimize_dpw,
    InteractionCandidate,
};
pub use mars::{fit_basis_function, MarsConfig, MarsModel};
pub use model::{
    BasisFunction, Cem, CsmModel, Dm, Dpw, DpwFactor, DpwShape, Hinge, ParameterCount,
    QualityTerm, CEM_COUNT, DM_COUNT, MODEL_FORMAT_VERSION,
};
