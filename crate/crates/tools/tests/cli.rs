mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use csm_tools::batch::{extract_database, load_model};
use csm_tools::calibration::database::ListeningTestDatabase;
use csm_tools::cli::main_with_args;
use csm_tools::evaluation::{evaluate, DEFAULT_BOOTSTRAP_SEED};
use csm_tools::features::FeatureExtractor;
use csm_tools::pipeline::PipelineConfig;
use csm_tools::synth::{synth_database, DatabaseSpec};

fn demo_model() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/demo_model.json")
}

fn csm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_csm"))
        .args(args)
        .env_remove("CSM_CONFIG")
        .output()
        .unwrap()
}

/// Runs in-process; returns exit code and standard output.
fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut full = vec!["csm"];
    full.extend_from_slice(args);
    let code = main_with_args(full, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn small_db(dir: &Path, signals: usize, bf_signals: usize, seed: u64) -> PathBuf {
    let spec = DatabaseSpec {
        signals,
        treatments: 5,
        duration: 2.0,
        bf_signals,
        seed,
        ..DatabaseSpec::default()
    };
    synth_database(&spec).unwrap().write(dir).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_model_exits_with_two() {
    let o = csm(&["score", "--ref", "a.wav", "--sut", "b.wav", "--model", "/no/such/model.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model not found"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(csm(&["score"]).status.code(), Some(2));
    assert_eq!(csm(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn malformed_manifest_row_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_db(dir.path(), 3, 1, 5);
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    lines[4] = lines[4].replacen(",", ",,", 1);
    std::fs::write(&manifest, lines.join("\n")).unwrap();
    let o = csm(&["evaluate", "--model", s(&demo_model()), "--manifest", s(&manifest)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 4"), "{err}");
}

#[test]
fn single_interaction_signal_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_db(dir.path(), 3, 2, 6);
    let out = dir.path().join("m.json");
    let o = csm(&["calibrate", "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("insufficient signals for interaction metric"), "{err}");
    assert!(!out.exists());
}

#[test]
fn evaluate_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_db(dir.path(), 6, 0, 7);
    let report_dir = dir.path().join("eval");
    let (code, stdout) = run(&[
        "evaluate",
        "--model",
        s(&demo_model()),
        "--manifest",
        s(&manifest),
        "--out-dir",
        s(&report_dir),
    ]);
    assert_eq!(code, 0);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();

    let model = load_model(&demo_model()).unwrap();
    let db = ListeningTestDatabase::load(&manifest).unwrap();
    let items = extract_database(&db, &PipelineConfig::default(), &FeatureExtractor::default()).unwrap();
    let lib = evaluate(&model, &items, DEFAULT_BOOTSTRAP_SEED).unwrap();
    assert_eq!(json["r"].as_f64().unwrap().to_bits(), lib.r.to_bits());
    assert_eq!(json["rmse"].as_f64().unwrap().to_bits(), lib.rmse.to_bits());
    assert!(json["config"]["pipeline"].is_object());
    assert!(stdout.contains(&format!("r {:.6}", lib.r)));
    for f in ["report.txt", "residuals.csv", "scatter.csv"] {
        assert!(report_dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn calibration_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_db(dir.path(), 10, 3, 8);
    let mut outputs = Vec::new();
    for (k, jobs) in ["1", "3"].into_iter().enumerate() {
        let model = dir.path().join(format!("m{k}.json"));
        let rep = dir.path().join(format!("rep{k}"));
        let (code, _) = run(&[
            "calibrate",
            "--jobs",
            jobs,
            "--manifest",
            s(&manifest),
            "--out",
            s(&model),
            "--report-dir",
            s(&rep),
        ]);
        assert_eq!(code, 0);
        load_model(&model).unwrap();
        outputs.push((
            std::fs::read(&model).unwrap(),
            std::fs::read(rep.join("candidates.csv")).unwrap(),
            std::fs::read(rep.join("coefficients.csv")).unwrap(),
        ));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn batch_score_keeps_manifest_order() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_db(dir.path(), 3, 0, 9);
    let a = run(&["batch-score", "--jobs", "1", "--manifest", s(&manifest), "--model", s(&demo_model())]);
    let b = run(&["batch-score", "--jobs", "4", "--manifest", s(&manifest), "--model", s(&demo_model())]);
    assert_eq!(a.0, 0);
    assert_eq!(a, b);
    let db = ListeningTestDatabase::load(&manifest).unwrap();
    let rows: Vec<&str> = a.1.lines().skip(1).collect();
    assert_eq!(rows.len(), db.items.len());
    for (row, it) in rows.iter().zip(&db.items) {
        assert!(row.starts_with(&format!("{},{},", it.signal_id, it.treatment_id)));
    }
}

#[test]
fn config_file_is_strict_and_overridable() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[pipeline]\ntarget_spl = 60.0\nvolume = 3\n").unwrap();
    let (code, _) = run(&["--config", s(&bad), "inspect-model", "--model", s(&demo_model())]);
    assert_eq!(code, 2);

    let good = dir.path().join("good.toml");
    std::fs::write(&good, "bootstrap_seed = 5\n[synth]\nsignals = 3\nbf_signals = 1\ntreatments = 4\nduration = 2.0\n")
        .unwrap();
    let out = dir.path().join("db");
    let (code, stdout) = run(&["--config", s(&good), "synth-db", "--out", s(&out), "--seed", "11"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("wrote 12 items"), "{stdout}");
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 11"));
    assert!(echoed.contains("bootstrap_seed = 5"));
}

#[test]
fn score_and_dump_features_agree() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_db(dir.path(), 1, 0, 12);
    let db = ListeningTestDatabase::load(&manifest).unwrap();
    let it = &db.items[2];
    let (r, t) = (db.resolve(&it.ref_path), db.resolve(&it.sut_path));
    let series = dir.path().join("series.csv");
    let internal = dir.path().join("internal");
    let (code, text) = run(&[
        "score",
        "--ref",
        s(&r),
        "--sut",
        s(&t),
        "--model",
        s(&demo_model()),
        "--series",
        s(&series),
        "--dump-internal",
        s(&internal),
    ]);
    assert_eq!(code, 0);
    assert!(text.starts_with("score "));
    assert!(internal.join("excitation_ref_ch0.csv").is_file());

    let (code, csv) = run(&["dump-features", "--ref", s(&r), "--sut", s(&t)]);
    assert_eq!(code, 0);
    let frames = csv.lines().count() - 1;
    assert_eq!(std::fs::read_to_string(&series).unwrap().lines().count() - 1, frames);
    assert!(csv.starts_with("frame,time_s,RmsModDiff,NoiseLoudness,LinDist,SegNMR,EHS,probSpeech,EPN,PDEV"));

    let identical = run(&["score", "--ref", s(&r), "--sut", s(&r), "--model", s(&demo_model())]).1;
    assert!(identical.contains("dm LinDist 0.000000"), "{identical}");
}

#[test]
fn demo_model_reproduces_golden_score() {
    let dir = tempfile::tempdir().unwrap();
    let (r, t) = common::write_fixture(dir.path());
    let (code, text) = run(&["--format", "csv", "score", "--ref", s(&r), "--sut", s(&t), "--model", s(&demo_model())]);
    assert_eq!(code, 0);
    let v: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("score,"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(v.to_bits(), common::golden_bits());
}
