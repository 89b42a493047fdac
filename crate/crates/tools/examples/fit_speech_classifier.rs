//! Refits the bundled speech classifier on synthetic speech and music.
//!
//! Usage: cargo run --release -p csm-tools --example fit_speech_classifier [OUT]
//!
//! Training sources use seeds from 1_000_000 upwards so they never
//! coincide with the seeds used by tests or the synthetic databases.

use csm_tools::features::speech::{fit_logistic, speech_features, SpeechClassifier, LogisticSpeechClassifier};
use csm_tools::synth::{synth_source, SourceKind};

const TRAIN_SEED: u64 = 1_000_000;
const PER_CLASS: u64 = 40;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/assets/speech_classifier.json").to_string());
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for k in 0..PER_CLASS {
        for (kind, label) in [(SourceKind::Speech, true), (SourceKind::Music, false)] {
            let w = synth_source(kind, 4.0, TRAIN_SEED + 2 * k + label as u64)?;
            for f in speech_features(&w.downmix()) {
                feats.push(f);
                labels.push(label);
            }
        }
    }
    let mut clf = fit_logistic(&feats, &labels, 1e-3)?;
    clf.version = "1".into();

    // held-out check on unseen seeds
    let mut correct = 0;
    let mut total = 0;
    for k in 0..10 {
        for (kind, label) in [(SourceKind::Speech, true), (SourceKind::Music, false)] {
            let w = synth_source(kind, 4.0, 2_000_000 + 2 * k + label as u64)?;
            for p in clf.decisions(&w.downmix()) {
                correct += ((p > 0.5) == label) as usize;
                total += 1;
            }
        }
    }
    eprintln!("held-out decision accuracy {:.3} ({total} decisions)", correct as f64 / total as f64);
    let check: LogisticSpeechClassifier = serde_json::from_str(&serde_json::to_string(&clf)?)?;
    assert_eq!(check, clf);
    std::fs::write(&out, serde_json::to_string_pretty(&clf)? + "\n")?;
    eprintln!("wrote {out}");
    Ok(())
}
