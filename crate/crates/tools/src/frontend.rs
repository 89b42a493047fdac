//! Perceptual front-end: waveform to excitation and modulation patterns.
//!
//! Processing chain per 20 ms frame:
//! Hann-windowed FFT, outer/middle-ear weighting, grouping into rectangular
//! bands on a critical-band-rate scale, level-dependent spreading across
//! bands, forward masking across frames, internal-noise floor and loudness
//! compression.

use std::io::Write;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Bumped whenever a feature definition changes in a way that invalidates
/// calibrated models.
pub const FEATURE_VERSION: &str = "csm-features-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontEndConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub n_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Loudness compression exponent.
    pub alpha: f64,
    /// Forward-masking decay time constant in seconds.
    pub forward_tau: f64,
    /// Spreading slope towards lower bands, dB per Bark.
    pub lower_slope: f64,
    /// Modulation smoothing time constant in seconds.
    pub modulation_tau: f64,
    /// Upper edge of the fine spectrum kept for harmonic-structure analysis.
    pub fine_max_hz: f64,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig {
            frame_len: 2048,
            hop: 960,
            n_bands: 40,
            f_min: 80.0,
            f_max: 18_000.0,
            alpha: 0.23,
            forward_tau: 0.05,
            lower_slope: 27.0,
            modulation_tau: 0.05,
            fine_max_hz: 9_000.0,
        }
    }
}

impl FrontEndConfig {
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / SAMPLE_RATE as f64
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.frame_len >= 64
            && self.frame_len.is_power_of_two()
            && self.hop > 0
            && self.hop <= self.frame_len
            && self.n_bands >= 2
            && self.f_min > 0.0
            && self.f_max > self.f_min
            && self.f_max < SAMPLE_RATE as f64 / 2.0
            && self.alpha > 0.0
            && self.alpha <= 1.0
            && self.forward_tau > 0.0
            && self.lower_slope > 0.0
            && self.modulation_tau > 0.0
            && self.fine_max_hz > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid front-end config {self:?}")))
        }
    }

    /// Short stable digest identifying this configuration and the feature
    /// definitions.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(FEATURE_VERSION.as_bytes());
        h.update(b"\n");
        h.update(json.as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn bin_hz(&self) -> f64 {
        SAMPLE_RATE as f64 / self.frame_len as f64
    }
}

/// Critical-band rate in Bark.
pub fn hz_to_bark(f: f64) -> f64 {
    7.0 * (f / 650.0).asinh()
}

pub fn bark_to_hz(z: f64) -> f64 {
    650.0 * (z / 7.0).sinh()
}

/// Outer and middle ear transfer function in dB.
pub fn ear_weight_db(f: f64) -> f64 {
    let k = (f / 1000.0).max(0.02);
    -0.6 * 3.64 * k.powf(-0.8) + 6.5 * (-0.6 * (k - 3.3) * (k - 3.3)).exp() - 1e-3 * k.powf(3.6)
}

/// Internal noise level in dB SPL.
pub fn internal_noise_db(f: f64) -> f64 {
    1.456 * (f / 1000.0).max(0.02).powf(-0.8)
}

/// SPL in dB to the linear power scale used here (full scale = 100 dB).
pub fn db_to_power(db: f64) -> f64 {
    10f64.powf((db - 100.0) / 10.0)
}

/// Band layout derived from a [`FrontEndConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct BandLayout {
    /// Bark edges, `n_bands + 1` values.
    pub edges_bark: Vec<f64>,
    pub centers_bark: Vec<f64>,
    pub centers_hz: Vec<f64>,
    /// For every FFT bin `0..=frame_len/2`, the band it feeds, if any.
    pub bin_band: Vec<Option<usize>>,
    /// Internal-noise energy per band.
    pub floor: Vec<f64>,
    /// Number of bins kept in the fine spectrum (starting at bin 1).
    pub fine_bins: usize,
    /// Internal-noise energy per fine bin.
    pub fine_floor: Vec<f64>,
    /// Ear weighting as a power factor per bin.
    pub ear_power: Vec<f64>,
}

impl BandLayout {
    pub fn new(cfg: &FrontEndConfig) -> Self {
        let z_lo = hz_to_bark(cfg.f_min);
        let z_hi = hz_to_bark(cfg.f_max);
        let dz = (z_hi - z_lo) / cfg.n_bands as f64;
        let edges_bark: Vec<f64> = (0..=cfg.n_bands).map(|i| z_lo + dz * i as f64).collect();
        let centers_bark: Vec<f64> = (0..cfg.n_bands).map(|i| z_lo + dz * (i as f64 + 0.5)).collect();
        let centers_hz: Vec<f64> = centers_bark.iter().map(|&z| bark_to_hz(z)).collect();
        let df = cfg.bin_hz();
        let n_bins = cfg.frame_len / 2 + 1;
        let bin_band = (0..n_bins)
            .map(|k| {
                let z = hz_to_bark(k as f64 * df);
                if z < z_lo || z >= z_hi {
                    None
                } else {
                    Some((((z - z_lo) / dz) as usize).min(cfg.n_bands - 1))
                }
            })
            .collect();
        let floor = centers_hz
            .iter()
            .map(|&f| db_to_power(internal_noise_db(f)))
            .collect();
        let fine_bins = ((cfg.fine_max_hz / df) as usize).min(n_bins - 1);
        let fine_floor = (1..=fine_bins)
            .map(|k| db_to_power(internal_noise_db(k as f64 * df)) / 8.0)
            .collect();
        let ear_power = (0..n_bins)
            .map(|k| 10f64.powf(ear_weight_db((k as f64 * df).max(1.0)) / 10.0))
            .collect();
        BandLayout {
            edges_bark,
            centers_bark,
            centers_hz,
            bin_band,
            floor,
            fine_bins,
            fine_floor,
            ear_power,
        }
    }

    pub fn n_bands(&self) -> usize {
        self.centers_bark.len()
    }

    pub fn band_width_bark(&self) -> f64 {
        self.edges_bark[1] - self.edges_bark[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationPattern {
    /// T x B compressed excitation, `(energy + floor)^alpha`.
    pub frames: Vec<Vec<f64>>,
    /// T x B excitation energy after spreading and forward masking, before
    /// the internal-noise floor is added.
    pub energy: Vec<Vec<f64>>,
    /// Internal-noise energy per band.
    pub floor: Vec<f64>,
    pub band_centers: Vec<f64>,
    pub band_centers_hz: Vec<f64>,
    pub frame_hop: f64,
    pub alpha: f64,
    /// T x K ear-weighted power spectrum of bins `1..=K`.
    pub fine: Vec<Vec<f64>>,
    pub fine_floor: Vec<f64>,
}

impl ExcitationPattern {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_bands(&self) -> usize {
        self.band_centers.len()
    }

    /// Compressed floor value of band `b`.
    pub fn floor_loudness(&self, b: usize) -> f64 {
        self.floor[b].powf(self.alpha)
    }

    /// Writes `frame,band,center_bark,energy,excitation` rows.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "frame,band,center_bark,energy,excitation")?;
        for (t, (row, erow)) in self.frames.iter().zip(&self.energy).enumerate() {
            for b in 0..row.len() {
                writeln!(
                    out,
                    "{t},{b},{},{:e},{:e}",
                    self.band_centers[b], erow[b], row[b]
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulationPattern {
    /// T x B modulation measure, all entries >= 0.
    pub frames: Vec<Vec<f64>>,
}

/// Number of analysis frames for `n` samples.
pub fn frame_count(n: usize, cfg: &FrontEndConfig) -> usize {
    if n < cfg.frame_len {
        1
    } else {
        (n - cfg.frame_len) / cfg.hop + 1
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Ear-weighted one-sided power spectra per frame, scaled so that a sine of
/// amplitude `A` carries total power `A^2 / 2`.
fn power_spectra(x: &[f64], cfg: &FrontEndConfig, layout: &BandLayout) -> Vec<Vec<f64>> {
    let n = cfg.frame_len;
    let win = hann(n);
    let norm = 2.0 / (n as f64 * win.iter().map(|w| w * w).sum::<f64>());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let t = frame_count(x.len(), cfg);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    (0..t)
        .map(|f| {
            let start = f * cfg.hop;
            for (i, v) in buf.iter_mut().enumerate() {
                let s = x.get(start + i).copied().unwrap_or(0.0);
                *v = Complex::new(s * win[i], 0.0);
            }
            fft.process(&mut buf);
            (0..=n / 2)
                .map(|k| buf[k].norm_sqr() * norm * layout.ear_power[k])
                .collect()
        })
        .collect()
}

/// Upper spreading slope in dB per Bark for a masker at `f` Hz and level
/// `level_db` dB SPL.
fn upper_slope(f: f64, level_db: f64) -> f64 {
    (24.0 + 230.0 / f - 0.2 * level_db).max(4.0)
}

fn spread(bands: &[f64], layout: &BandLayout, cfg: &FrontEndConfig) -> Vec<f64> {
    let nb = bands.len();
    let dz = layout.band_width_bark();
    let lower = 10f64.powf(-cfg.lower_slope * dz / 10.0);
    let mut out = vec![0.0; nb];
    for (j, &e) in bands.iter().enumerate() {
        if e <= 0.0 {
            continue;
        }
        out[j] += e;
        let level = 100.0 + 10.0 * e.log10();
        let upper = 10f64.powf(-upper_slope(layout.centers_hz[j], level) * dz / 10.0);
        let mut g = e;
        for o in out.iter_mut().skip(j + 1) {
            g *= upper;
            *o += g;
        }
        let mut g = e;
        for o in out[..j].iter_mut().rev() {
            g *= lower;
            *o += g;
        }
    }
    out
}

/// Excitation pattern of one channel.
pub fn compute_excitation_channel(x: &[f64], cfg: &FrontEndConfig, layout: &BandLayout) -> ExcitationPattern {
    let spectra = power_spectra(x, cfg, layout);
    let nb = layout.n_bands();
    let spread_frames: Vec<Vec<f64>> = spectra
        .iter()
        .map(|p| {
            let mut bands = vec![0.0; nb];
            for (k, &v) in p.iter().enumerate() {
                if let Some(b) = layout.bin_band[k] {
                    bands[b] += v;
                }
            }
            spread(&bands, layout, cfg)
        })
        .collect();

    // forward masking: decaying maximum over a finite look-back
    let decay = (-cfg.hop_seconds() / cfg.forward_tau).exp();
    let memory = (4.0 * cfg.forward_tau / cfg.hop_seconds()).ceil() as usize;
    let energy: Vec<Vec<f64>> = (0..spread_frames.len())
        .map(|t| {
            (0..nb)
                .map(|b| {
                    let mut m = spread_frames[t][b];
                    let mut g = 1.0;
                    for j in 1..=memory.min(t) {
                        g *= decay;
                        m = m.max(g * spread_frames[t - j][b]);
                    }
                    m
                })
                .collect()
        })
        .collect();

    let frames = energy
        .iter()
        .map(|row| {
            row.iter()
                .zip(&layout.floor)
                .map(|(&e, &fl)| (e + fl).powf(cfg.alpha))
                .collect()
        })
        .collect();
    let fine = spectra
        .iter()
        .map(|p| p[1..=layout.fine_bins].to_vec())
        .collect();
    ExcitationPattern {
        frames,
        energy,
        floor: layout.floor.clone(),
        band_centers: layout.centers_bark.clone(),
        band_centers_hz: layout.centers_hz.clone(),
        frame_hop: cfg.hop_seconds(),
        alpha: cfg.alpha,
        fine,
        fine_floor: layout.fine_floor.clone(),
    }
}

/// Excitation patterns, one per channel.
pub fn compute_excitation(w: &Waveform, cfg: &FrontEndConfig) -> Result<Vec<ExcitationPattern>> {
    cfg.validate()?;
    if w.sample_rate != SAMPLE_RATE {
        return Err(Error::ShapeMismatch(format!(
            "front-end expects {SAMPLE_RATE} Hz, got {}",
            w.sample_rate
        )));
    }
    let layout = BandLayout::new(cfg);
    Ok(w.channels
        .iter()
        .map(|c| compute_excitation_channel(c, cfg, &layout))
        .collect())
}

/// Per band: rectified frame-to-frame change of the compressed excitation,
/// one-pole smoothed, divided by the equally smoothed excitation.
pub fn compute_modulation(e: &ExcitationPattern, modulation_tau: f64) -> Result<ModulationPattern> {
    let t = e.n_frames();
    if t < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: t });
    }
    let a = (-e.frame_hop / modulation_tau).exp();
    let nb = e.n_bands();
    let mut out = vec![vec![0.0; nb]; t];
    for b in 0..nb {
        let mut d_s = 0.0;
        let mut e_s = e.frames[0][b];
        for n in 1..t {
            let d = (e.frames[n][b] - e.frames[n - 1][b]).abs();
            d_s = a * d_s + (1.0 - a) * d;
            e_s = a * e_s + (1.0 - a) * e.frames[n][b];
            out[n][b] = d_s / e_s;
        }
    }
    Ok(ModulationPattern { frames: out })
}
