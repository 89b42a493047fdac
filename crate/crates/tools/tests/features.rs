use std::f64::consts::PI;

use csm_core::{Cem, Dm, FeatureSeries};
use csm_tools::audio::Waveform;
use csm_tools::batch::extract_pair;
use csm_tools::features::dms::SEGNMR_FLOOR_DB;
use csm_tools::features::speech::{LogisticSpeechClassifier, SpeechClassifier};
use csm_tools::features::FeatureExtractor;
use csm_tools::pipeline::PipelineConfig;
use csm_tools::synth::{apply_artifact, synth_source, ArtifactKind, ArtifactRecipe, SourceKind};

const FS: f64 = 48_000.0;

fn features(r: &Waveform, s: &Waveform) -> FeatureSeries {
    extract_pair(r, s, &PipelineConfig::default(), &FeatureExtractor::default()).unwrap()
}

fn dm(f: &FeatureSeries, d: Dm) -> f64 {
    f.item_mean_dm[d.index()]
}

fn cem(f: &FeatureSeries, c: Cem) -> f64 {
    f.item_mean_cem[c.index()]
}

fn mono(x: Vec<f64>) -> Waveform {
    Waveform::mono(x, 48_000).unwrap()
}

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed | 1;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s as f64 / u64::MAX as f64 - 0.5) * 0.4
        })
        .collect()
}

#[test]
fn identical_pairs_give_zero_or_floored_dms() {
    let sources = [
        synth_source(SourceKind::Speech, 3.0, 7).unwrap(),
        synth_source(SourceKind::Music, 3.0, 8).unwrap(),
        mono(white(96_000, 3)),
    ];
    for w in &sources {
        let f = features(w, w);
        for row in &f.dm {
            assert_eq!(row[Dm::RmsModDiff.index()], 0.0);
            assert_eq!(row[Dm::NoiseLoudness.index()], 0.0);
            assert_eq!(row[Dm::LinDist.index()], 0.0);
            assert_eq!(row[Dm::SegNmr.index()], SEGNMR_FLOOR_DB);
            assert_eq!(row[Dm::Ehs.index()], 0.0);
        }
        assert!(f.cem.iter().all(|c| c[Cem::Epn.index()] == 0.0));
    }
}

#[test]
fn item_means_are_series_means() {
    let r = synth_source(SourceKind::Mixed, 4.0, 21).unwrap();
    let s = apply_artifact(&r, &ArtifactRecipe::new(ArtifactKind::AdditiveNoise, 1.0), 5).unwrap();
    let f = features(&r, &s);
    let n = f.len() as f64;
    for k in 0..5 {
        let m: f64 = f.dm.iter().map(|row| row[k]).sum::<f64>() / n;
        assert!((m - f.item_mean_dm[k]).abs() < 1e-12);
    }
    for k in 0..3 {
        let m: f64 = f.cem.iter().map(|row| row[k]).sum::<f64>() / n;
        assert!((m - f.item_mean_cem[k]).abs() < 1e-12);
    }
    for row in &f.cem {
        assert!((0.0..=1.0).contains(&row[Cem::ProbSpeech.index()]));
        assert!(row[Cem::Epn.index()] >= 0.0 && row[Cem::Pdev.index()] >= 0.0);
    }
    assert!(f.dm.iter().flatten().enumerate().all(|(i, &v)| i % 5 == Dm::SegNmr.index() || v >= 0.0));
}

#[test]
fn lowpass_is_a_linear_distortion() {
    let r = synth_source(SourceKind::Music, 4.0, 31).unwrap();
    let s = apply_artifact(&r, &ArtifactRecipe::lowpass_hz(3_500.0), 1).unwrap();
    let f = features(&r, &s);
    assert!(
        dm(&f, Dm::LinDist) > dm(&f, Dm::NoiseLoudness),
        "LinDist {} NoiseLoudness {}",
        dm(&f, Dm::LinDist),
        dm(&f, Dm::NoiseLoudness)
    );
}

#[test]
fn harmonic_error_raises_ehs_over_white_noise() {
    for seed in [41, 42, 43] {
        let r = synth_source(SourceKind::Music, 3.0, seed).unwrap();
        let comb = apply_artifact(&r, &ArtifactRecipe::new(ArtifactKind::HarmonicComb, 1.5), seed).unwrap();
        let noise = apply_artifact(&r, &ArtifactRecipe::new(ArtifactKind::AdditiveNoise, 1.5), seed).unwrap();
        let (ec, en) = (dm(&features(&r, &comb), Dm::Ehs), dm(&features(&r, &noise), Dm::Ehs));
        assert!(ec > 2.0 * en, "seed {seed}: comb {ec} white {en}");
    }
}

#[test]
fn level_modulated_reference_has_larger_pdev() {
    let n = 4 * 48_000;
    let base = white(n, 17);
    let modulated: Vec<f64> = base
        .iter()
        .enumerate()
        .map(|(i, v)| v * (1.0 + 0.9 * (2.0 * PI * 2.0 * i as f64 / FS).sin()))
        .collect();
    // same mean power as the modulated signal
    let g = (1.0f64 + 0.81 / 2.0).sqrt();
    let steady: Vec<f64> = base.iter().map(|v| v * g).collect();
    let err = white(n, 99).into_iter().map(|v| v * 0.01).collect::<Vec<_>>();
    let add = |x: &[f64]| mono(x.iter().zip(&err).map(|(a, b)| a + b).collect());
    let pm = cem(&features(&mono(modulated.clone()), &add(&modulated)), Cem::Pdev);
    let ps = cem(&features(&mono(steady.clone()), &add(&steady)), Cem::Pdev);
    assert!(pm > ps, "modulated {pm} steady {ps}");
}

#[test]
fn cems_ignore_a_common_input_gain() {
    let r = synth_source(SourceKind::Speech, 3.0, 55).unwrap();
    let s = apply_artifact(&r, &ArtifactRecipe::new(ArtifactKind::Modulation, 1.0), 3).unwrap();
    let a = features(&r, &s);
    let b = features(&r.scaled(0.3), &s.scaled(0.3));
    for (x, y) in a.cem.iter().zip(&b.cem) {
        assert!((x[Cem::Epn.index()] - y[Cem::Epn.index()]).abs() < 1e-9);
        assert!((x[Cem::Pdev.index()] - y[Cem::Pdev.index()]).abs() < 1e-9);
    }
}

fn mean_prob(w: &Waveform) -> f64 {
    let d = LogisticSpeechClassifier::bundled().decisions(&w.downmix());
    d.iter().sum::<f64>() / d.len() as f64
}

#[test]
fn classifier_separates_held_out_speech_and_music() {
    // seeds outside the classifier's training and validation ranges
    assert!(mean_prob(&synth_source(SourceKind::Speech, 4.0, 5_000_000).unwrap()) > 0.5);
    assert!(mean_prob(&synth_source(SourceKind::Music, 4.0, 5_000_000).unwrap()) < 0.5);
    let mut correct = 0;
    for seed in 5_000_001..5_000_021 {
        correct += usize::from(mean_prob(&synth_source(SourceKind::Speech, 4.0, seed).unwrap()) > 0.5);
        correct += usize::from(mean_prob(&synth_source(SourceKind::Music, 4.0, seed).unwrap()) < 0.5);
    }
    assert!(correct >= 34, "{correct} of 40 correct");
}

#[test]
fn voiced_speech_surrogate_and_sine() {
    // 120 Hz pulse train through two formant resonators, gated at 4 Hz
    let n = 4 * 48_000;
    let mut x = vec![0.0; n];
    let period = (FS / 120.0) as usize;
    for i in (0..n).step_by(period) {
        x[i] = 1.0;
    }
    for (f, bw) in [(700.0, 130.0), (1200.0, 150.0)] {
        let r = (-PI * bw / FS).exp();
        let (a1, a2) = (2.0 * r * (2.0 * PI * f / FS).cos(), -r * r);
        let (mut y1, mut y2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = *v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gated: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let g = (PI * 4.0 * i as f64 / FS).sin().abs().powi(2);
            0.3 * v / peak * g
        })
        .collect();
    assert!(mean_prob(&mono(gated)) > 0.5);
    let sine: Vec<f64> = (0..n).map(|i| 0.3 * (2.0 * PI * 440.0 * i as f64 / FS).sin()).collect();
    assert!(mean_prob(&mono(sine)) < 0.5);
}

/// Matched DM for each artifact kind.
fn matched(kind: ArtifactKind) -> Dm {
    match kind {
        ArtifactKind::Lowpass => Dm::LinDist,
        ArtifactKind::AdditiveNoise => Dm::NoiseLoudness,
        ArtifactKind::HarmonicComb => Dm::Ehs,
        ArtifactKind::Modulation => Dm::RmsModDiff,
        ArtifactKind::LevelOffset => Dm::NoiseLoudness,
    }
}

#[test]
fn severity_sweeps_are_monotone() {
    let severities = [0.25, 0.5, 1.0, 1.5, 2.0];
    let sources = [
        synth_source(SourceKind::Speech, 3.0, 61).unwrap(),
        synth_source(SourceKind::Music, 3.0, 62).unwrap(),
        synth_source(SourceKind::Mixed, 3.0, 63).unwrap(),
    ];
    for kind in ArtifactKind::ALL {
        for (j, r) in sources.iter().enumerate() {
            let vals: Vec<f64> = severities
                .iter()
                .map(|&s| {
                    let sut = apply_artifact(r, &ArtifactRecipe::new(kind, s), 9).unwrap();
                    dm(&features(r, &sut), matched(kind))
                })
                .collect();
            assert!(
                vals.windows(2).all(|w| w[1] > w[0]),
                "{} on source {j}: {vals:?}",
                kind.name()
            );
        }
    }
}
