//! Procedural listening-test databases with a known latent quality model.
//!
//! Seeds are derived with a SplitMix64 chain from the database seed and the
//! signal/treatment indices, so any item can be regenerated on its own and
//! parallel generation matches serial generation.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav_f32, Waveform, SAMPLE_RATE};
use crate::calibration::database::{DbItem, ListeningTestDatabase, Scale, Split};
use crate::error::{Error, Result};

const FS: f64 = SAMPLE_RATE as f64;

/// SplitMix64 finaliser.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a path of indices below `base`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Speech,
    Music,
    Mixed,
}

impl SourceKind {
    /// Share of the signal that is speech.
    pub fn speech_fraction(self) -> f64 {
        match self {
            SourceKind::Speech => 1.0,
            SourceKind::Music => 0.0,
            SourceKind::Mixed => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceKind::Speech => "speech",
            SourceKind::Music => "music",
            SourceKind::Mixed => "mixed",
        }
    }
}

impl FromStr for SourceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(SourceKind::Speech),
            "music" => Ok(SourceKind::Music),
            "mixed" => Ok(SourceKind::Mixed),
            other => Err(Error::Config(format!("unknown source kind {other:?}"))),
        }
    }
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        for v in x.iter_mut() {
            *v *= peak / m;
        }
    }
}

struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Resonator {
            a1: 0.0,
            a2: 0.0,
            gain: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tune(&mut self, freq: f64, bw: f64) {
        let r = (-PI * bw / FS).exp();
        self.a1 = 2.0 * r * (2.0 * PI * freq / FS).cos();
        self.a2 = -r * r;
        self.gain = 1.0 - r;
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

const VOWELS: [(f64, f64, f64); 6] = [
    (730.0, 1090.0, 2440.0),
    (530.0, 1840.0, 2480.0),
    (270.0, 2290.0, 3010.0),
    (570.0, 840.0, 2410.0),
    (300.0, 870.0, 2240.0),
    (660.0, 1720.0, 2410.0),
];

fn speech_like(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let f0_base = r.random_range(100.0..220.0);
    let rate = r.random_range(3.5..5.0);
    let intonation_phase = r.random_range(0.0..2.0 * PI);
    let mut out = vec![0.0; n];
    let mut formants = [Resonator::new(), Resonator::new(), Resonator::new()];
    let (mut lp1, mut lp2) = (0.0, 0.0);
    let mut phase = 0.0;
    let mut t0 = 0usize;
    while t0 < n {
        if r.random::<f64>() < 0.15 {
            // phrase pause
            t0 += (r.random_range(0.2..0.5) * FS) as usize;
            continue;
        }
        let dur = ((1.0 / rate) * r.random_range(0.7..1.3) * FS) as usize;
        let (f1, f2, f3) = VOWELS[r.random_range(0..VOWELS.len())];
        formants[0].tune(f1, 80.0);
        formants[1].tune(f2, 100.0);
        formants[2].tune(f3, 140.0);
        let fricative = r.random::<f64>() < 0.4;
        let fric_len = (0.04 * FS) as usize;
        let syl_f0 = r.random_range(0.9..1.1);
        let mut prev_noise = 0.0;
        for k in 0..dur {
            let i = t0 + k;
            if i >= n {
                break;
            }
            let t = i as f64 / FS;
            let env = (PI * k as f64 / dur as f64).sin().powi(2);
            let f0 = f0_base * syl_f0 * (1.0 + 0.08 * (2.0 * PI * 0.3 * t + intonation_phase).sin());
            phase += f0 / FS;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            lp1 = 0.9 * lp1 + pulse;
            lp2 = 0.9 * lp2 + lp1;
            let mut v = lp2;
            for f in formants.iter_mut() {
                v = f.tick(v);
            }
            let mut s = v * env;
            if fricative && k < fric_len {
                let w: f64 = r.random_range(-1.0..1.0);
                let hp = w - prev_noise;
                prev_noise = w;
                s += 0.02 * hp * (PI * k as f64 / fric_len as f64).sin();
            }
            out[i] = s;
        }
        t0 += dur;
    }
    normalize_peak(&mut out, 0.5);
    out
}

fn midi_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

fn music_like(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let beat = r.random_range(0.45..0.7);
    let beat_len = (beat * FS) as usize;
    let chord_len = 4 * beat_len;
    // 0 = sustained pads, 1 = plucked notes over a loud kit
    let articulation: f64 = r.random_range(0.0..1.0);
    let decay = 2.0 * (0.06f64).powf(articulation);
    let kick_level = r.random_range(0.15..0.35) * (0.3 + 1.2 * articulation);
    let roots = [48.0, 53.0, 55.0, 57.0];
    let mut out = vec![0.0; n];
    let n_chords = n.div_ceil(chord_len);
    for c in 0..n_chords {
        let root = roots[r.random_range(0..roots.len())];
        let third = if r.random::<bool>() { 4.0 } else { 3.0 };
        let notes = [root - 12.0, root, root + third, root + 7.0, root + 12.0];
        let phases: Vec<f64> = (0..notes.len() * 10).map(|_| r.random_range(0.0..2.0 * PI)).collect();
        let start = c * chord_len;
        let end = ((c + 1) * chord_len).min(n);
        let fade = (0.03 * FS) as usize;
        for i in start..end {
            let k = i - start;
            let since_beat = (k % beat_len) as f64 / FS;
            let env = (k as f64 / fade as f64).min(1.0)
                * ((end - i) as f64 / fade as f64).min(1.0)
                * (-since_beat / decay).exp();
            let t = i as f64 / FS;
            let mut s = 0.0;
            for (ni, &m) in notes.iter().enumerate() {
                let f = midi_hz(m);
                for h in 1..=10 {
                    let fh = f * h as f64;
                    if fh > 16_000.0 {
                        break;
                    }
                    let a = (-(h as f64) * 0.25).exp() / h as f64;
                    s += a * (2.0 * PI * fh * t + phases[ni * 10 + h - 1]).sin();
                }
            }
            out[i] += 0.2 * env * s;
        }
    }
    let mut b = 0;
    while b * beat_len < n {
        let start = b * beat_len;
        let kick_len = (0.15 * FS) as usize;
        for k in 0..kick_len.min(n - start) {
            let t = k as f64 / FS;
            let f = 50.0 + 100.0 * (-t / 0.02).exp();
            out[start + k] += kick_level * (2.0 * PI * f * t).sin() * (-t / 0.08).exp();
        }
        let hat = start + beat_len / 2;
        let hat_len = (0.04 * FS) as usize;
        let mut prev = 0.0;
        for k in 0..hat_len {
            if hat + k >= n {
                break;
            }
            let w: f64 = r.random_range(-1.0..1.0);
            let t = k as f64 / FS;
            out[hat + k] += 0.5 * kick_level * (w - prev) * (-t / 0.01).exp();
            prev = w;
        }
        b += 1;
    }
    normalize_peak(&mut out, 0.5);
    out
}

/// Deterministic procedural source signal.
pub fn synth_source(kind: SourceKind, duration: f64, seed: u64) -> Result<Waveform> {
    if !(2.0..=30.0).contains(&duration) {
        return Err(Error::Config(format!("source duration {duration} s outside [2, 30]")));
    }
    let n = (duration * FS).round() as usize;
    let x = match kind {
        SourceKind::Speech => speech_like(n, derive_seed(seed, &[1])),
        SourceKind::Music => music_like(n, derive_seed(seed, &[2])),
        SourceKind::Mixed => {
            let half = n / 2;
            let mut m = music_like(half, derive_seed(seed, &[2]));
            m.extend(speech_like(n - half, derive_seed(seed, &[1])));
            m
        }
    };
    Waveform::mono(x, SAMPLE_RATE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Lowpass,
    AdditiveNoise,
    HarmonicComb,
    Modulation,
    LevelOffset,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::Lowpass,
        ArtifactKind::AdditiveNoise,
        ArtifactKind::HarmonicComb,
        ArtifactKind::Modulation,
        ArtifactKind::LevelOffset,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Lowpass => "lowpass",
            ArtifactKind::AdditiveNoise => "additive-noise",
            ArtifactKind::HarmonicComb => "harmonic-comb",
            ArtifactKind::Modulation => "modulation",
            ArtifactKind::LevelOffset => "level-offset",
        }
    }
}

impl FromStr for ArtifactKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ArtifactKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown artifact kind {s:?}")))
    }
}

/// One degradation step. A treatment is a list of these applied in order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRecipe {
    pub kind: ArtifactKind,
    pub severity: f64,
}

impl ArtifactRecipe {
    pub fn new(kind: ArtifactKind, severity: f64) -> Self {
        ArtifactRecipe { kind, severity }
    }

    /// Lowpass recipe with the given cutoff.
    pub fn lowpass_hz(cutoff: f64) -> Self {
        ArtifactRecipe::new(ArtifactKind::Lowpass, (20_000.0 / cutoff - 1.0) / 4.0)
    }
}

impl fmt::Display for ArtifactRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.name(), self.severity)
    }
}

impl FromStr for ArtifactRecipe {
    type Err = Error;
    /// Parses `kind:severity`.
    fn from_str(s: &str) -> Result<Self> {
        let (k, v) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("recipe {s:?} is not kind:severity")))?;
        let severity: f64 = v
            .parse()
            .map_err(|_| Error::Config(format!("bad severity in {s:?}")))?;
        if !(severity >= 0.0 && severity.is_finite()) {
            return Err(Error::Config(format!("severity must be >= 0 in {s:?}")));
        }
        Ok(ArtifactRecipe::new(k.parse()?, severity))
    }
}

/// Treatment recipes as `kind:sev+kind:sev`; the empty string is the
/// identity.
pub fn format_recipes(r: &[ArtifactRecipe]) -> String {
    r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("+")
}

pub fn parse_recipes(s: &str) -> Result<Vec<ArtifactRecipe>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split('+').map(str::parse).collect()
}

pub fn lowpass_cutoff(severity: f64) -> f64 {
    20_000.0 / (1.0 + 4.0 * severity)
}

fn fft_filter(x: &[f64], gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = x.len();
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let kk = if k <= m / 2 { k } else { m - k };
        *v *= gain(kk as f64 * FS / m as f64) / m as f64;
    }
    inv.process(&mut buf);
    buf[..n].iter().map(|c| c.re).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// SNR in dB used by the additive artifacts at a given severity.
pub fn artifact_snr_db(severity: f64) -> f64 {
    45.0 - 15.0 * severity
}

fn lowpass(x: &[f64], severity: f64) -> Vec<f64> {
    let fc = lowpass_cutoff(severity);
    let (lo, hi) = (0.95 * fc, 1.05 * fc);
    fft_filter(x, |f| {
        if f <= lo {
            1.0
        } else if f >= hi {
            0.0
        } else {
            0.5 + 0.5 * (PI * (f - lo) / (hi - lo)).cos()
        }
    })
}

fn additive_noise(x: &[f64], severity: f64, seed: u64) -> Vec<f64> {
    let level = rms(x) * 10f64.powf(-artifact_snr_db(severity) / 20.0);
    let mut r = rng(seed);
    let normal = Normal::new(0.0, level).expect("finite level");
    x.iter().map(|&v| v + normal.sample(&mut r)).collect()
}

/// Smoothed amplitude envelope normalised to unit RMS.
fn envelope(x: &[f64]) -> Vec<f64> {
    let a = (-1.0 / (0.01 * FS)).exp();
    let mut s = 0.0;
    let mut out: Vec<f64> = x
        .iter()
        .map(|&v| {
            s = a * s + (1.0 - a) * v * v;
            s.sqrt()
        })
        .collect();
    let r = rms(&out);
    if r > 0.0 {
        for v in out.iter_mut() {
            *v /= r;
        }
    }
    out
}

fn harmonic_comb(x: &[f64], severity: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let f0 = r.random_range(150.0..300.0);
    let n_h = (8_000.0 / f0) as usize;
    let phases: Vec<f64> = (0..n_h).map(|_| r.random_range(0.0..2.0 * PI)).collect();
    let env = envelope(x);
    let mut comb: Vec<f64> = (0..x.len())
        .map(|i| {
            let t = i as f64 / FS;
            let s: f64 = (1..=n_h)
                .map(|h| (2.0 * PI * f0 * h as f64 * t + phases[h - 1]).sin())
                .sum();
            s * env[i]
        })
        .collect();
    let cr = rms(&comb);
    let level = rms(x) * 10f64.powf(-artifact_snr_db(severity) / 20.0);
    if cr > 0.0 {
        for v in comb.iter_mut() {
            *v *= level / cr;
        }
    }
    x.iter().zip(&comb).map(|(a, b)| a + b).collect()
}

fn modulation(x: &[f64], severity: f64) -> Vec<f64> {
    let depth = 0.8 * (1.0 - (-severity).exp());
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = i as f64 / FS;
            v * (1.0 - depth * (0.5 - 0.5 * (2.0 * PI * 8.0 * t).cos()))
        })
        .collect()
}

fn level_offset(x: &[f64], severity: f64) -> Vec<f64> {
    let g = 10f64.powf(-3.0 * severity / 20.0);
    x.iter().map(|v| v * g).collect()
}

/// Applies one artifact. Severity 0 returns the input unchanged.
pub fn apply_artifact(w: &Waveform, r: &ArtifactRecipe, seed: u64) -> Result<Waveform> {
    if !(r.severity >= 0.0 && r.severity.is_finite()) {
        return Err(Error::Config(format!("invalid severity {}", r.severity)));
    }
    if r.severity == 0.0 {
        return Ok(w.clone());
    }
    let mut ch = 0u64;
    w.map_channels(|x| {
        ch += 1;
        let s = derive_seed(seed, &[ch]);
        match r.kind {
            ArtifactKind::Lowpass => lowpass(x, r.severity),
            ArtifactKind::AdditiveNoise => additive_noise(x, r.severity, s),
            ArtifactKind::HarmonicComb => harmonic_comb(x, r.severity, s),
            ArtifactKind::Modulation => modulation(x, r.severity),
            ArtifactKind::LevelOffset => level_offset(x, r.severity),
        }
    })
}

pub fn apply_recipes(w: &Waveform, recipes: &[ArtifactRecipe], seed: u64) -> Result<Waveform> {
    let mut out = w.clone();
    for (k, r) in recipes.iter().enumerate() {
        out = apply_artifact(&out, r, derive_seed(seed, &[k as u64]))?;
    }
    Ok(out)
}

/// Ground-truth quality as a function of artifact severities.
///
/// Each kind contributes a saturating degradation
/// `D = amplitude * (1 - exp(-severity / scale))`, and quality is
/// `100 * prod(1 - D / 100)`. The lowpass amplitude is reduced for speech
/// content by `speech_lowpass_factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentQualityModel {
    /// Indexed by [`ArtifactKind::index`].
    pub amplitude: [f64; 5],
    pub scale: [f64; 5],
    pub speech_lowpass_factor: f64,
    /// Per-listener score standard deviation.
    pub listener_sigma: f64,
    pub listeners: usize,
}

impl Default for LatentQualityModel {
    fn default() -> Self {
        LatentQualityModel {
            amplitude: [70.0, 60.0, 50.0, 45.0, 25.0],
            scale: [0.6, 0.8, 0.8, 0.8, 1.0],
            speech_lowpass_factor: 0.25,
            listener_sigma: 10.0,
            listeners: 20,
        }
    }
}

impl LatentQualityModel {
    pub fn quality(&self, recipes: &[ArtifactRecipe], speech_fraction: f64) -> f64 {
        let mut sev = [0.0; 5];
        for r in recipes {
            sev[r.kind.index()] += r.severity;
        }
        let mut q = 100.0;
        for k in 0..5 {
            let mut a = self.amplitude[k];
            if k == ArtifactKind::Lowpass.index() {
                a *= 1.0 - (1.0 - self.speech_lowpass_factor) * speech_fraction;
            }
            let d = a * (1.0 - (-sev[k] / self.scale[k]).exp());
            q *= 1.0 - d / 100.0;
        }
        q.clamp(0.0, 100.0)
    }

    pub fn noise_sigma(&self) -> f64 {
        self.listener_sigma / (self.listeners.max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatabaseSpec {
    pub signals: usize,
    pub treatments: usize,
    pub duration: f64,
    /// Number of signals (taken first) forming the isolated-artifact BF
    /// split; the rest form the interaction split.
    pub bf_signals: usize,
    pub latent: LatentQualityModel,
    pub seed: u64,
}

impl Default for DatabaseSpec {
    fn default() -> Self {
        DatabaseSpec {
            signals: 24,
            treatments: 7,
            duration: 3.0,
            bf_signals: 6,
            latent: LatentQualityModel::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSignal {
    pub id: String,
    pub kind: SourceKind,
    pub seed: u64,
    pub reference: Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthItem {
    pub signal_index: usize,
    pub signal_id: String,
    pub treatment_id: String,
    pub split: Split,
    pub kind: SourceKind,
    pub recipes: Vec<ArtifactRecipe>,
    pub seed: u64,
    pub latent: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatabase {
    pub spec: DatabaseSpec,
    pub signals: Vec<SynthSignal>,
    pub items: Vec<SynthItem>,
}

fn source_kind(j: usize) -> SourceKind {
    match j % 3 {
        0 => SourceKind::Speech,
        1 => SourceKind::Music,
        _ => SourceKind::Mixed,
    }
}

fn random_recipe(r: &mut ChaCha8Rng, kind: ArtifactKind, lo: f64, hi: f64) -> ArtifactRecipe {
    let mut s = r.random_range(lo..hi);
    if kind == ArtifactKind::Lowpass {
        s *= 0.6;
    }
    ArtifactRecipe::new(kind, s)
}

/// Treatment list for one signal.
fn treatments(spec: &DatabaseSpec, split: Split, seed: u64) -> Vec<Vec<ArtifactRecipe>> {
    let mut r = rng(seed);
    let mut out = vec![Vec::new()];
    match split {
        Split::Bf => {
            let offset = r.random_range(0..5);
            for t in 1..spec.treatments {
                let kind = ArtifactKind::ALL[(t - 1 + offset) % 5];
                out.push(vec![random_recipe(&mut r, kind, 0.1, 2.0)]);
            }
        }
        Split::Interaction => {
            for t in 1..spec.treatments {
                match t {
                    1 => out.push(vec![ArtifactRecipe::lowpass_hz(3_500.0)]),
                    2 => out.push(vec![ArtifactRecipe::lowpass_hz(7_000.0)]),
                    _ => {
                        let mut kinds = ArtifactKind::ALL.to_vec();
                        let n = r.random_range(2..=3);
                        let mut rec = Vec::new();
                        for _ in 0..n {
                            let k = kinds.remove(r.random_range(0..kinds.len()));
                            rec.push(random_recipe(&mut r, k, 0.2, 1.5));
                        }
                        rec.sort_by_key(|x| x.kind);
                        out.push(rec);
                    }
                }
            }
        }
    }
    out
}

/// Builds the database in memory. References are rendered; degraded
/// signals are rendered on demand with [`SyntheticDatabase::render_sut`].
pub fn synth_database(spec: &DatabaseSpec) -> Result<SyntheticDatabase> {
    if spec.signals == 0 || spec.treatments < 3 {
        return Err(Error::Config("need at least one signal and three treatments".into()));
    }
    if spec.bf_signals > spec.signals {
        return Err(Error::Config("bf_signals exceeds signals".into()));
    }
    let signals: Vec<SynthSignal> = (0..spec.signals)
        .into_par_iter()
        .map(|j| {
            let kind = source_kind(j);
            let seed = derive_seed(spec.seed, &[j as u64, 0]);
            Ok(SynthSignal {
                id: format!("s{j:02}"),
                kind,
                seed,
                reference: synth_source(kind, spec.duration, seed)?,
            })
        })
        .collect::<Result<_>>()?;
    let sigma = spec.latent.noise_sigma();
    let mut items = Vec::new();
    for (j, sig) in signals.iter().enumerate() {
        let split = if j < spec.bf_signals {
            Split::Bf
        } else {
            Split::Interaction
        };
        let list = treatments(spec, split, derive_seed(spec.seed, &[j as u64, 1]));
        for (i, recipes) in list.into_iter().enumerate() {
            let latent = spec.latent.quality(&recipes, sig.kind.speech_fraction());
            let noise = if sigma > 0.0 {
                let mut r = rng(derive_seed(spec.seed, &[j as u64, 2, i as u64]));
                Normal::new(0.0, sigma).expect("finite sigma").sample(&mut r)
            } else {
                0.0
            };
            items.push(SynthItem {
                signal_index: j,
                signal_id: sig.id.clone(),
                treatment_id: format!("t{i}"),
                split,
                kind: sig.kind,
                recipes,
                seed: derive_seed(spec.seed, &[j as u64, 3, i as u64]),
                latent,
                score: (latent + noise).clamp(0.0, 100.0),
            });
        }
    }
    Ok(SyntheticDatabase {
        spec: spec.clone(),
        signals,
        items,
    })
}

impl SyntheticDatabase {
    pub fn reference(&self, item: &SynthItem) -> &Waveform {
        &self.signals[item.signal_index].reference
    }

    pub fn render_sut(&self, item: &SynthItem) -> Result<Waveform> {
        apply_recipes(self.reference(item), &item.recipes, item.seed)
    }

    /// Writes float WAV files, `manifest.csv` and `ground_truth.csv` into `dir`.
    /// Returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir.join("ref")).map_err(|e| Error::io(dir, e))?;
        std::fs::create_dir_all(dir.join("sut")).map_err(|e| Error::io(dir, e))?;
        for s in &self.signals {
            write_wav_f32(&dir.join("ref").join(format!("{}.wav", s.id)), &s.reference)?;
        }
        self.items
            .par_iter()
            .try_for_each(|it| -> Result<()> {
                let w = self.render_sut(it)?;
                let p = dir.join("sut").join(format!("{}_{}.wav", it.signal_id, it.treatment_id));
                write_wav_f32(&p, &w)
            })?;
        let db = self.to_database(dir);
        let manifest = dir.join("manifest.csv");
        db.write_manifest(&manifest)?;

        let gt = dir.join("ground_truth.csv");
        let mut w = csv::Writer::from_path(&gt).map_err(|e| Error::Manifest(e.to_string()))?;
        w.write_record(["signal_id", "treatment_id", "split", "kind", "speech_fraction", "recipes", "latent", "score"])
            .map_err(|e| Error::Manifest(e.to_string()))?;
        for it in &self.items {
            w.write_record([
                it.signal_id.clone(),
                it.treatment_id.clone(),
                it.split.name().to_string(),
                it.kind.name().to_string(),
                it.kind.speech_fraction().to_string(),
                format_recipes(&it.recipes),
                it.latent.to_string(),
                it.score.to_string(),
            ])
            .map_err(|e| Error::Manifest(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&gt, e))?;
        Ok(manifest)
    }

    /// Manifest view with paths relative to `root`.
    pub fn to_database(&self, root: &Path) -> ListeningTestDatabase {
        ListeningTestDatabase {
            root: root.to_path_buf(),
            items: self
                .items
                .iter()
                .map(|it| DbItem {
                    signal_id: it.signal_id.clone(),
                    treatment_id: it.treatment_id.clone(),
                    ref_path: PathBuf::from("ref").join(format!("{}.wav", it.signal_id)),
                    sut_path: PathBuf::from("sut").join(format!("{}_{}.wav", it.signal_id, it.treatment_id)),
                    mean_score: it.score,
                    scale: Scale::Mushra,
                    split: Some(it.split),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sources_are_deterministic() {
        for kind in [SourceKind::Speech, SourceKind::Music, SourceKind::Mixed] {
            let a = synth_source(kind, 2.0, 9).unwrap();
            let b = synth_source(kind, 2.0, 9).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 96_000);
        }
    }

    #[test]
    fn duration_is_bounded() {
        assert!(synth_source(SourceKind::Speech, 1.0, 0).is_err());
        assert!(synth_source(SourceKind::Speech, 31.0, 0).is_err());
    }

    #[test]
    fn zero_severity_is_identity() {
        let w = synth_source(SourceKind::Music, 2.0, 3).unwrap();
        for k in ArtifactKind::ALL {
            assert_eq!(apply_artifact(&w, &ArtifactRecipe::new(k, 0.0), 1).unwrap(), w);
        }
    }

    #[test]
    fn recipe_parsing() {
        let r: ArtifactRecipe = "additive-noise:0.5".parse().unwrap();
        assert_eq!(r, ArtifactRecipe::new(ArtifactKind::AdditiveNoise, 0.5));
        assert!("bitcrush:1".parse::<ArtifactRecipe>().is_err());
        assert!("lowpass:-1".parse::<ArtifactRecipe>().is_err());
        let list = parse_recipes("lowpass:1+modulation:0.25").unwrap();
        assert_eq!(format_recipes(&list), "lowpass:1+modulation:0.25");
        assert!(parse_recipes("").unwrap().is_empty());
    }

    #[test]
    fn anchors_map_to_cutoffs() {
        assert!((lowpass_cutoff(ArtifactRecipe::lowpass_hz(3500.0).severity) - 3500.0).abs() < 1e-9);
    }

    #[test]
    fn latent_quality_is_monotone_and_bounded() {
        let m = LatentQualityModel::default();
        assert_eq!(m.quality(&[], 0.3), 100.0);
        for k in ArtifactKind::ALL {
            let mut prev = 100.0;
            for s in [0.1, 0.5, 1.0, 2.0, 5.0] {
                let q = m.quality(&[ArtifactRecipe::new(k, s)], 0.0);
                assert!(q <= prev && (0.0..=100.0).contains(&q));
                prev = q;
            }
        }
        let lp = [ArtifactRecipe::lowpass_hz(3500.0)];
        assert!(m.quality(&lp, 1.0) > m.quality(&lp, 0.0));
    }

    #[test]
    fn noiseless_scores_equal_latent() {
        let spec = DatabaseSpec {
            signals: 3,
            treatments: 4,
            duration: 2.0,
            bf_signals: 1,
            latent: LatentQualityModel {
                listener_sigma: 0.0,
                ..LatentQualityModel::default()
            },
            seed: 5,
        };
        let db = synth_database(&spec).unwrap();
        assert_eq!(db.items.len(), 12);
        for it in &db.items {
            assert_eq!(it.score, it.latent);
            if it.recipes.is_empty() {
                assert_eq!(it.latent, 100.0);
            }
        }
    }
}
