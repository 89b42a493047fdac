mod common;

use std::path::Path;

use common::{asset, golden_bits, write_fixture};
use csm_core::score;
use csm_tools::audio::load_waveform;
use csm_tools::batch::{extract_pair, load_model, model_from_json, model_to_json};
use csm_tools::features::FeatureExtractor;
use csm_tools::pipeline::PipelineConfig;
use csm_tools::Error;

fn fixture_score() -> f64 {
    let dir = tempfile::tempdir().unwrap();
    let (rp, sp) = write_fixture(dir.path());
    let model = load_model(&asset("demo_model.json")).unwrap();
    let f = extract_pair(
        &load_waveform(&rp).unwrap(),
        &load_waveform(&sp).unwrap(),
        &PipelineConfig::default(),
        &FeatureExtractor::default(),
    )
    .unwrap();
    score(&f, &model).unwrap().score
}

#[test]
fn demo_model_matches_golden_score() {
    let got = fixture_score();
    if std::env::var_os("CSM_UPDATE_GOLDEN").is_some() {
        std::fs::write(asset("demo_golden.txt"), format!("{:016x} {got}\n", got.to_bits())).unwrap();
    }
    let bits = golden_bits();
    assert_eq!(got.to_bits(), bits, "score {got} vs golden {}", f64::from_bits(bits));
}

#[test]
fn serialization_round_trips_exactly() {
    let text = std::fs::read_to_string(asset("demo_model.json")).unwrap();
    let model = model_from_json(&text).unwrap();
    assert_eq!(model_to_json(&model), text);
    let again = model_from_json(&model_to_json(&model)).unwrap();
    assert_eq!(again, model);
}

#[test]
fn schema_violations_are_rejected() {
    let text = std::fs::read_to_string(asset("demo_model.json")).unwrap();
    let unknown = text.replacen("\"config_hash\"", "\"colour\": 1,\n  \"config_hash\"", 1);
    assert!(matches!(model_from_json(&unknown), Err(Error::ModelSchema(_))));
    let version = text.replacen("\"format_version\": \"1.", "\"format_version\": \"9.", 1);
    assert!(matches!(model_from_json(&version), Err(Error::ModelSchema(_))));
    let dangling = text.replacen("\"dpw\": \"DPW3\"", "\"dpw\": \"DPW99\"", 1);
    assert_ne!(dangling, text);
    assert!(matches!(model_from_json(&dangling), Err(Error::ModelSchema(_))));
}

#[test]
fn missing_model_is_reported() {
    let err = load_model(Path::new("/nonexistent/model.json")).unwrap_err();
    assert!(matches!(err, Error::ModelNotFound(_)));
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("model not found"));
}
