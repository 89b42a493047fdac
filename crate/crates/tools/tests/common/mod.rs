use std::path::{Path, PathBuf};

use csm_tools::audio::write_wav_f32;
use csm_tools::synth::{apply_recipes, parse_recipes, synth_source, SourceKind};

pub fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
}

/// Writes the golden fixture pair (float WAV) into `dir`.
pub fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let r = synth_source(SourceKind::Mixed, 4.0, 424_242).unwrap();
    let s = apply_recipes(&r, &parse_recipes("lowpass:0.5+additive-noise:0.8").unwrap(), 7).unwrap();
    let (rp, sp) = (dir.join("fixture_ref.wav"), dir.join("fixture_sut.wav"));
    write_wav_f32(&rp, &r).unwrap();
    write_wav_f32(&sp, &s).unwrap();
    (rp, sp)
}

/// Golden score bits stored next to the demo model.
pub fn golden_bits() -> u64 {
    let text = std::fs::read_to_string(asset("demo_golden.txt")).unwrap();
    u64::from_str_radix(text.split_whitespace().next().unwrap(), 16).unwrap()
}
