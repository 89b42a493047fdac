//! Model files and database-wide feature extraction.

use std::path::Path;

use csm_core::{CsmModel, FeatureSeries, MODEL_FORMAT_VERSION};
use rayon::prelude::*;

use crate::audio::{load_waveform, Waveform};
use crate::calibration::database::ListeningTestDatabase;
use crate::calibration::ItemFeatures;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::pipeline::{preprocess, PipelineConfig};
use crate::synth::SyntheticDatabase;

pub fn model_to_json(model: &CsmModel) -> String {
    let mut s = serde_json::to_string_pretty(model).expect("model serializes");
    s.push('\n');
    s
}

/// Parses and validates model text.
pub fn model_from_json(text: &str) -> Result<CsmModel> {
    let model: CsmModel = serde_json::from_str(text).map_err(|e| Error::ModelSchema(e.to_string()))?;
    let major = |v: &str| v.split('.').next().map(str::to_owned);
    if major(&model.format_version) != major(MODEL_FORMAT_VERSION) {
        return Err(Error::ModelSchema(format!(
            "format version {} is not compatible with {MODEL_FORMAT_VERSION}",
            model.format_version
        )));
    }
    model.validate().map_err(|e| Error::ModelSchema(e.to_string()))?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<CsmModel> {
    if !path.is_file() {
        return Err(Error::ModelNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

pub fn save_model(model: &CsmModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

/// Preprocesses one pair and extracts its features.
pub fn extract_pair(
    reference: &Waveform,
    sut: &Waveform,
    pipeline: &PipelineConfig,
    extractor: &FeatureExtractor,
) -> Result<FeatureSeries> {
    let pair = preprocess(reference, sut, pipeline)?;
    extractor.extract(&pair)
}

/// Loads and extracts every manifest item in parallel; output keeps
/// manifest order.
pub fn extract_database(
    db: &ListeningTestDatabase,
    pipeline: &PipelineConfig,
    extractor: &FeatureExtractor,
) -> Result<Vec<ItemFeatures>> {
    db.items
        .par_iter()
        .map(|it| {
            let r = load_waveform(&db.resolve(&it.ref_path))?;
            let s = load_waveform(&db.resolve(&it.sut_path))?;
            let features = extract_pair(&r, &s, pipeline, extractor).map_err(|e| {
                log::error!("{}/{}: {e}", it.signal_id, it.treatment_id);
                e
            })?;
            Ok(ItemFeatures {
                signal_id: it.signal_id.clone(),
                treatment_id: it.treatment_id.clone(),
                split: it.split,
                score: it.mushra(),
                features,
            })
        })
        .collect()
}

/// In-memory extraction of a synthetic database (no WAV round trip).
pub fn extract_synthetic(
    sdb: &SyntheticDatabase,
    pipeline: &PipelineConfig,
    extractor: &FeatureExtractor,
) -> Result<Vec<ItemFeatures>> {
    sdb.items
        .par_iter()
        .map(|it| {
            let s = sdb.render_sut(it)?;
            Ok(ItemFeatures {
                signal_id: it.signal_id.clone(),
                treatment_id: it.treatment_id.clone(),
                split: Some(it.split),
                score: it.score,
                features: extract_pair(sdb.reference(it), &s, pipeline, extractor)?,
            })
        })
        .collect()
}
