//! Waveform container, WAV I/O and sample-rate conversion.

use std::path::Path;

use crate::error::{Error, Result};

/// Internal processing rate.
pub const SAMPLE_RATE: u32 = 48_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    /// One buffer per channel, all the same length.
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::UnsupportedChannels(channels.len()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidWaveform("channels differ in length".into()));
        }
        if n == 0 {
            return Err(Error::ZeroLength);
        }
        Ok(Waveform {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Channel average.
    pub fn downmix(&self) -> Vec<f64> {
        if self.channels.len() == 1 {
            return self.channels[0].clone();
        }
        let k = self.channels.len() as f64;
        (0..self.len())
            .map(|i| self.channels.iter().map(|c| c[i]).sum::<f64>() / k)
            .collect()
    }

    /// Applies `f` to every channel buffer.
    pub fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        Self::new(self.channels.iter().map(|c| f(c)).collect(), self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Waveform {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&x| x * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a WAV file and converts it to the internal 48 kHz rate.
///
/// Integer PCM is scaled by `1 / 2^(bits-1)`, so 16-bit data is divided by
/// 32768. Files already at 48 kHz are not resampled.
pub fn load_waveform(path: &Path) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate == SAMPLE_RATE {
        Ok(w)
    } else {
        resample(&w, SAMPLE_RATE)
    }
}

/// Reads a WAV file at its native rate.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if n_ch == 0 || n_ch > 2 {
        return Err(Error::UnsupportedChannels(n_ch));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Wav {
                    path: path.to_path_buf(),
                    message: format!("unsupported float width {}", spec.bits_per_sample),
                });
            }
            reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !matches!(bits, 8 | 16 | 24 | 32) {
                return Err(Error::Wav {
                    path: path.to_path_buf(),
                    message: format!("unsupported PCM width {bits}"),
                });
            }
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    if interleaved.is_empty() {
        return Err(Error::ZeroLength);
    }
    let frames = interleaved.len() / n_ch;
    let channels = (0..n_ch)
        .map(|c| (0..frames).map(|i| interleaved[i * n_ch + c]).collect())
        .collect();
    Waveform::new(channels, spec.sample_rate)
}

/// Writes 16-bit PCM with rounding and clipping to [-1, 1).
pub fn write_wav_i16(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: w.n_channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map)?;
    for i in 0..w.len() {
        for c in &w.channels {
            let v = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).map_err(map)?;
        }
    }
    writer.finalize().map_err(map)
}

/// Writes 32-bit float samples.
pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: w.n_channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map)?;
    for i in 0..w.len() {
        for c in &w.channels {
            writer.write_sample(c[i] as f32).map_err(map)?;
        }
    }
    writer.finalize().map_err(map)
}

/// Kaiser window shape parameter. Gives roughly 100 dB sidelobe rejection.
const KAISER_BETA: f64 = 10.0;
/// Kernel half-length in zero crossings of the filter cutoff.
const HALF_ZERO_CROSSINGS: f64 = 64.0;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.92;

/// Output length for a rational rate change, rounded to nearest.
pub fn resampled_len(n: usize, from: u32, to: u32) -> usize {
    ((n as u128 * to as u128 + from as u128 / 2) / from as u128) as usize
}

/// Windowed-sinc resampler with a Kaiser window (beta 10, 64 zero crossings
/// per side, cutoff at 0.92 of the lower Nyquist frequency). Output sample
/// `m` is taken at input position `m * from / to`.
pub fn resample(w: &Waveform, to: u32) -> Result<Waveform> {
    let from = w.sample_rate;
    if from == to {
        return Ok(w.clone());
    }
    let ratio = to as f64 / from as f64;
    // cutoff in cycles per input sample
    let fc = 0.5 * ratio.min(1.0) * ROLLOFF;
    let half = HALF_ZERO_CROSSINGS / (2.0 * fc);
    let i0_beta = bessel_i0(KAISER_BETA);
    let out_len = resampled_len(w.len(), from, to);
    let mut out = w.map_channels(|x| {
        let n = x.len() as isize;
        (0..out_len)
            .map(|m| {
                let t = m as f64 * from as f64 / to as f64;
                let lo = (t - half).ceil().max(0.0) as isize;
                let hi = ((t + half).floor() as isize).min(n - 1);
                let mut acc = 0.0;
                for k in lo..=hi {
                    let d = k as f64 - t;
                    let r = d / half;
                    let win = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                    acc += x[k as usize] * 2.0 * fc * sinc(2.0 * fc * d) * win;
                }
                acc
            })
            .collect()
    })?;
    out.sample_rate = to;
    Ok(out)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_matches_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-13);
        assert!((bessel_i0(10.0) - 2_815.716_628_466_254).abs() < 1e-8);
    }

    #[test]
    fn resampled_length_rounds() {
        assert_eq!(resampled_len(44100, 44100, 48000), 48000);
        assert_eq!(resampled_len(1, 44100, 48000), 1);
        assert_eq!(resampled_len(441, 44100, 48000), 480);
    }

    #[test]
    fn resampling_preserves_a_midband_tone() {
        let fs = 44100.0;
        let x: Vec<f64> = (0..8820)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / fs).sin() * 0.5)
            .collect();
        let w = Waveform::mono(x, 44100).unwrap();
        let y = resample(&w, 48000).unwrap();
        // compare interior against the analytic tone at the new rate
        let mut max_err: f64 = 0.0;
        for (m, &v) in y.channels[0].iter().enumerate().skip(500).take(8000) {
            let t = m as f64 / 48000.0;
            let want = (2.0 * std::f64::consts::PI * 1000.0 * t).sin() * 0.5;
            max_err = max_err.max((v - want).abs());
        }
        assert!(max_err < 1e-4, "max_err {max_err}");
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            Waveform::new(vec![vec![0.0]; 3], 48000),
            Err(Error::UnsupportedChannels(3))
        ));
        assert!(matches!(Waveform::mono(vec![], 48000), Err(Error::ZeroLength)));
    }
}
