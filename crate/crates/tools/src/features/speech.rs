//! Speech/non-speech classification of the reference signal.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision length: 16 ms at 48 kHz.
pub const DECISION_LEN: usize = 768;
/// Number of decisions in the context used for the modulation and flux
/// statistics (about one second).
pub const CONTEXT_DECISIONS: usize = 64;
/// Decision rate in Hz.
const DECISION_RATE: f64 = 48_000.0 / DECISION_LEN as f64;
/// Voicing lag range in samples (400 Hz down to 60 Hz).
const VOICING_LAGS: (usize, usize) = (120, 800);
const VOICING_WINDOW: usize = 1536;
const FLUX_FFT: usize = 1024;

/// Produces one speech probability per [`DECISION_LEN`] samples.
pub trait SpeechClassifier: Send + Sync {
    fn decisions(&self, x: &[f64]) -> Vec<f64>;
}

/// Per-decision inputs of the default classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeechFeatures {
    /// Share of envelope modulation energy in 2.5-6 Hz relative to 0.5-16 Hz.
    pub modulation_ratio: f64,
    /// Variance of the normalised spectral flux over the context.
    pub flux_variance: f64,
    /// Mean normalised autocorrelation peak over the context.
    pub voicing: f64,
}

impl SpeechFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.modulation_ratio, self.flux_variance, self.voicing]
    }
}

fn context(i: usize, n: usize) -> (usize, usize) {
    if n <= CONTEXT_DECISIONS {
        return (0, n);
    }
    let start = i.saturating_sub(CONTEXT_DECISIONS / 2).min(n - CONTEXT_DECISIONS);
    (start, start + CONTEXT_DECISIONS)
}

fn modulation_ratio(env: &[f64]) -> f64 {
    let n = env.len();
    if n < 8 {
        return 0.0;
    }
    let mean = env.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    // envelope fluctuation under 1% of its level counts as none
    let var = env.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n as f64;
    if var.sqrt() < 0.01 * mean {
        return 0.0;
    }
    let df = DECISION_RATE / n as f64;
    let (mut band, mut total) = (0.0, 0.0);
    for k in 1..n / 2 {
        let f = k as f64 * df;
        if !(0.5..=16.0).contains(&f) {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &e) in env.iter().enumerate() {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / n as f64).cos();
            let ph = 2.0 * std::f64::consts::PI * k as f64 * t as f64 / n as f64;
            let v = (e - mean) * w;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        let p = re * re + im * im;
        total += p;
        if (2.5..=6.0).contains(&f) {
            band += p;
        }
    }
    if total > 0.0 {
        band / total
    } else {
        0.0
    }
}

/// Peak of the normalised autocorrelation in the voicing lag range.
fn voicing_peak(frame: &[f64], fft: &dyn rustfft::Fft<f64>, ifft: &dyn rustfft::Fft<f64>, size: usize) -> f64 {
    let n = frame.len();
    let energy: f64 = frame.iter().map(|x| x * x).sum();
    if energy <= 0.0 {
        return 0.0;
    }
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    fft.process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    ifft.process(&mut buf);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + frame[i] * frame[i];
    }
    let mut best: f64 = 0.0;
    for l in VOICING_LAGS.0..=VOICING_LAGS.1.min(n - 1) {
        let head = prefix[n - l];
        let tail = prefix[n] - prefix[l];
        if head <= 0.0 || tail <= 0.0 {
            continue;
        }
        let r = buf[l].re / size as f64 / (head * tail).sqrt();
        best = best.max(r);
    }
    best.min(1.0)
}

/// Feature vectors for every complete decision of `x`.
pub fn speech_features(x: &[f64]) -> Vec<SpeechFeatures> {
    let d = x.len() / DECISION_LEN;
    if d == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let flux_fft = planner.plan_fft_forward(FLUX_FFT);
    let vsize = (2 * VOICING_WINDOW).next_power_of_two();
    let v_fwd = planner.plan_fft_forward(vsize);
    let v_inv = planner.plan_fft_inverse(vsize);
    let win: Vec<f64> = (0..DECISION_LEN)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / DECISION_LEN as f64).cos())
        .collect();

    let mut env = Vec::with_capacity(d);
    let mut flux = Vec::with_capacity(d);
    let mut voicing = Vec::with_capacity(d);
    let mut prev_spec: Option<Vec<f64>> = None;
    let mut buf = vec![Complex::new(0.0, 0.0); FLUX_FFT];
    for i in 0..d {
        let frame = &x[i * DECISION_LEN..(i + 1) * DECISION_LEN];
        env.push((frame.iter().map(|v| v * v).sum::<f64>() / DECISION_LEN as f64).sqrt());

        for v in buf.iter_mut() {
            *v = Complex::new(0.0, 0.0);
        }
        for (j, &s) in frame.iter().enumerate() {
            buf[j] = Complex::new(s * win[j], 0.0);
        }
        flux_fft.process(&mut buf);
        let mag: Vec<f64> = buf[..FLUX_FFT / 2 + 1].iter().map(|c| c.norm()).collect();
        let sum: f64 = mag.iter().sum();
        let spec: Vec<f64> = if sum > 0.0 {
            mag.iter().map(|m| m / sum).collect()
        } else {
            vec![0.0; mag.len()]
        };
        let fl = match &prev_spec {
            Some(p) => p.iter().zip(&spec).map(|(a, b)| (a - b).abs()).sum(),
            None => 0.0,
        };
        flux.push(fl);
        prev_spec = Some(spec);

        let center = i * DECISION_LEN + DECISION_LEN / 2;
        let start = center as isize - (VOICING_WINDOW / 2) as isize;
        let vframe: Vec<f64> = (0..VOICING_WINDOW as isize)
            .map(|k| {
                let idx = start + k;
                if idx < 0 {
                    0.0
                } else {
                    x.get(idx as usize).copied().unwrap_or(0.0)
                }
            })
            .collect();
        voicing.push(voicing_peak(&vframe, v_fwd.as_ref(), v_inv.as_ref(), vsize));
    }
    if d > 1 {
        flux[0] = flux[1];
    }

    (0..d)
        .map(|i| {
            let (lo, hi) = context(i, d);
            let f = &flux[lo..hi];
            let fm = f.iter().sum::<f64>() / f.len() as f64;
            let fv = f.iter().map(|v| (v - fm) * (v - fm)).sum::<f64>() / f.len() as f64;
            SpeechFeatures {
                modulation_ratio: modulation_ratio(&env[lo..hi]),
                flux_variance: fv,
                voicing: voicing[lo..hi].iter().sum::<f64>() / (hi - lo) as f64,
            }
        })
        .collect()
}

/// Logistic model on standardised [`SpeechFeatures`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticSpeechClassifier {
    pub version: String,
    pub feature_means: [f64; 3],
    pub feature_stds: [f64; 3],
    pub weights: [f64; 3],
    pub bias: f64,
}

const BUNDLED: &str = include_str!("../../assets/speech_classifier.json");

impl LogisticSpeechClassifier {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED).expect("bundled classifier asset is valid")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("speech classifier: {e}")))
    }

    pub fn probability(&self, f: &SpeechFeatures) -> f64 {
        let x = f.as_array();
        let mut z = self.bias;
        for i in 0..3 {
            z += self.weights[i] * (x[i] - self.feature_means[i]) / self.feature_stds[i];
        }
        1.0 / (1.0 + (-z).exp())
    }
}

impl SpeechClassifier for LogisticSpeechClassifier {
    fn decisions(&self, x: &[f64]) -> Vec<f64> {
        speech_features(x).iter().map(|f| self.probability(f)).collect()
    }
}

/// Averages decisions into frames of `frame_samples` samples. Each decision
/// belongs to the frame containing its centre sample; centres beyond the
/// last frame go to the last frame. A frame without decisions repeats the
/// previous frame's value (0.5 if there is none).
pub fn synchronize(decisions: &[f64], n_frames: usize, frame_samples: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n_frames];
    let mut count = vec![0usize; n_frames];
    for (i, &p) in decisions.iter().enumerate() {
        let center = i * DECISION_LEN + DECISION_LEN / 2;
        let f = (center / frame_samples).min(n_frames.saturating_sub(1));
        sum[f] += p;
        count[f] += 1;
    }
    let mut out = Vec::with_capacity(n_frames);
    let mut last = 0.5;
    for f in 0..n_frames {
        if count[f] > 0 {
            last = sum[f] / count[f] as f64;
        }
        out.push(last);
    }
    out
}

/// Fits logistic weights by Newton iterations with a small ridge penalty.
/// Returns a classifier whose standardisation uses the training statistics.
pub fn fit_logistic(features: &[SpeechFeatures], labels: &[bool], ridge: f64) -> Result<LogisticSpeechClassifier> {
    use nalgebra::{DMatrix, DVector};
    let n = features.len();
    if n < 4 || n != labels.len() {
        return Err(Error::Config("speech classifier fit needs labelled data".into()));
    }
    let mut means = [0.0; 3];
    let mut stds = [0.0; 3];
    for i in 0..3 {
        let col: Vec<f64> = features.iter().map(|f| f.as_array()[i]).collect();
        means[i] = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - means[i]) * (v - means[i])).sum::<f64>() / n as f64;
        stds[i] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let x = DMatrix::from_fn(n, 4, |r, c| {
        if c == 0 {
            1.0
        } else {
            (features[r].as_array()[c - 1] - means[c - 1]) / stds[c - 1]
        }
    });
    let y = DVector::from_fn(n, |r, _| if labels[r] { 1.0 } else { 0.0 });
    let mut w = DVector::<f64>::zeros(4);
    for _ in 0..100 {
        let z = &x * &w;
        let p = z.map(|v| 1.0 / (1.0 + (-v).exp()));
        let mut grad = x.transpose() * (&p - &y);
        let mut h = DMatrix::<f64>::zeros(4, 4);
        for r in 0..n {
            let s = p[r] * (1.0 - p[r]);
            let row = x.row(r);
            h += row.transpose() * row * s;
        }
        for c in 1..4 {
            grad[c] += ridge * w[c];
            h[(c, c)] += ridge;
        }
        let step = h
            .lu()
            .solve(&grad)
            .ok_or_else(|| Error::Config("singular Hessian in classifier fit".into()))?;
        w -= &step;
        if step.norm() < 1e-10 {
            break;
        }
    }
    Ok(LogisticSpeechClassifier {
        version: "1".into(),
        feature_means: means,
        feature_stds: stds,
        weights: [w[1], w[2], w[3]],
        bias: w[0],
    })
}
