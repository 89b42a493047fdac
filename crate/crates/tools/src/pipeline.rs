//! Alignment, level scaling and silence trimming of REF/SUT pairs.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Presentation level in dB SPL, full scale mapped to 100 dB SPL.
    pub target_spl: f64,
    /// Largest delay searched, in samples.
    pub max_lag: usize,
    /// Summed absolute amplitude over `silence_run` samples below which a
    /// window counts as silent.
    pub silence_threshold: f64,
    pub silence_run: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_spl: 65.0,
            max_lag: 48_000,
            silence_threshold: 200.0 / 32768.0,
            silence_run: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSignalPair {
    pub reference: Waveform,
    pub sut: Waveform,
    pub applied_lag: i64,
    pub gain_ref: f64,
    pub gain_sut: f64,
    pub trim_head: usize,
    pub trim_tail: usize,
}

/// Long-term level of a waveform with full scale at 100 dB SPL.
pub fn level_db(w: &Waveform) -> f64 {
    let n = (w.len() * w.n_channels()) as f64;
    let ss: f64 = w.channels.iter().flatten().map(|x| x * x).sum();
    100.0 + 10.0 * (ss / n).log10()
}

/// Cross-correlation lag estimate: `r[l] = sum_n ref[n] * sut[n + l]`,
/// maximised over `|l| <= max_lag`. Ties go to the smaller `|l|`, then to
/// the positive lag.
pub fn estimate_lag(reference: &[f64], sut: &[f64], max_lag: usize) -> i64 {
    let n = (reference.len() + sut.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex<f64>> = reference.iter().map(|&x| Complex::new(x, 0.0)).collect();
    a.resize(n, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = sut.iter().map(|&x| Complex::new(x, 0.0)).collect();
    b.resize(n, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    let mut r: Vec<Complex<f64>> = a.iter().zip(&b).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut r);
    let max_pos = max_lag.min(sut.len().saturating_sub(1)) as i64;
    let max_neg = max_lag.min(reference.len().saturating_sub(1)) as i64;
    let at = |l: i64| -> f64 {
        let idx = if l >= 0 { l as usize } else { (n as i64 + l) as usize };
        r[idx].re
    };
    let mut best = 0i64;
    let mut best_val = at(0);
    for d in 1..=max_pos.max(max_neg) {
        for l in [d, -d] {
            if (l > 0 && l > max_pos) || (l < 0 && -l > max_neg) {
                continue;
            }
            let v = at(l);
            if v > best_val {
                best_val = v;
                best = l;
            }
        }
    }
    best
}

/// Estimates the lag on mono downmixes and shifts the SUT by `-lag`; both
/// signals are then cut to their common support.
pub fn delay_compensate(
    reference: &Waveform,
    sut: &Waveform,
    max_lag: usize,
) -> Result<(Waveform, Waveform, i64)> {
    check_pair(reference, sut)?;
    let shortest = reference.len().min(sut.len());
    if shortest < 2 * max_lag {
        return Err(Error::TooShortForLag {
            needed: 2 * max_lag,
            got: shortest,
        });
    }
    let lag = estimate_lag(&reference.downmix(), &sut.downmix(), max_lag);
    let (ref_start, sut_start) = if lag >= 0 {
        (0, lag as usize)
    } else {
        ((-lag) as usize, 0)
    };
    let len = (reference.len() - ref_start).min(sut.len() - sut_start);
    let r = reference.map_channels(|c| c[ref_start..ref_start + len].to_vec())?;
    let s = sut.map_channels(|c| c[sut_start..sut_start + len].to_vec())?;
    Ok((r, s, lag))
}

/// Gain that brings the reference to `target_spl`; applied to both signals.
pub fn scale_levels(pair: AlignedSignalPair, target_spl: f64) -> Result<AlignedSignalPair> {
    let level = level_db(&pair.reference);
    if !level.is_finite() {
        return Err(Error::SilentReference);
    }
    let gain = 10f64.powf((target_spl - level) / 20.0);
    Ok(AlignedSignalPair {
        reference: pair.reference.scaled(gain),
        sut: pair.sut.scaled(gain),
        gain_ref: pair.gain_ref * gain,
        gain_sut: pair.gain_sut * gain,
        ..pair
    })
}

/// Per-window activity flags: true where the window starting at `i` has
/// summed absolute amplitude (all channels) at or above `threshold`.
fn active_windows(w: &Waveform, threshold: f64, run: usize) -> Vec<bool> {
    let n = w.len();
    let run = run.clamp(1, n);
    let a: Vec<f64> = (0..n)
        .map(|i| w.channels.iter().map(|c| c[i].abs()).sum())
        .collect();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + a[i];
    }
    (0..=n - run)
        .map(|s| prefix[s + run] - prefix[s] >= threshold)
        .collect()
}

/// Removes leading and trailing regions that are silent in both signals.
/// The head ends at the first window start where either signal is active,
/// the tail begins after the end of the last active window.
pub fn trim_silence(pair: AlignedSignalPair, threshold: f64, run: usize) -> Result<AlignedSignalPair> {
    let n = pair.reference.len();
    if pair.sut.len() != n {
        return Err(Error::ShapeMismatch("trim requires equal lengths".into()));
    }
    let run_eff = run.clamp(1, n);
    let ar = active_windows(&pair.reference, threshold, run);
    let asut = active_windows(&pair.sut, threshold, run);
    let active = |s: usize| ar[s] || asut[s];
    let first = (0..ar.len()).find(|&s| active(s)).ok_or(Error::AllSilent)?;
    let last = (0..ar.len()).rev().find(|&s| active(s)).unwrap_or(first);
    let end = last + run_eff;
    let head = first;
    let tail = n - end;
    let cut = |w: &Waveform| w.map_channels(|c| c[head..end].to_vec());
    Ok(AlignedSignalPair {
        reference: cut(&pair.reference)?,
        sut: cut(&pair.sut)?,
        trim_head: pair.trim_head + head,
        trim_tail: pair.trim_tail + tail,
        ..pair
    })
}

fn check_pair(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::ShapeMismatch(format!(
            "sample rates {} and {}",
            a.sample_rate, b.sample_rate
        )));
    }
    if a.n_channels() != b.n_channels() {
        return Err(Error::ShapeMismatch(format!(
            "channel counts {} and {}",
            a.n_channels(),
            b.n_channels()
        )));
    }
    Ok(())
}

/// Full preprocessing: delay compensation, joint silence trimming, then
/// level scaling. Inputs not at 48 kHz are rejected; use
/// [`crate::audio::load_waveform`] to convert on load.
pub fn preprocess(reference: &Waveform, sut: &Waveform, cfg: &PipelineConfig) -> Result<AlignedSignalPair> {
    check_pair(reference, sut)?;
    if reference.sample_rate != SAMPLE_RATE {
        return Err(Error::ShapeMismatch(format!(
            "expected {SAMPLE_RATE} Hz input, got {}",
            reference.sample_rate
        )));
    }
    let max_lag = cfg.max_lag.min(reference.len().min(sut.len()) / 2);
    let (r, s, lag) = delay_compensate(reference, sut, max_lag)?;
    let pair = AlignedSignalPair {
        reference: r,
        sut: s,
        applied_lag: lag,
        gain_ref: 1.0,
        gain_sut: 1.0,
        trim_head: 0,
        trim_tail: 0,
    };
    let pair = trim_silence(pair, cfg.silence_threshold, cfg.silence_run)?;
    scale_levels(pair, cfg.target_spl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    fn pair(r: Vec<f64>, s: Vec<f64>) -> AlignedSignalPair {
        AlignedSignalPair {
            reference: Waveform::mono(r, 48000).unwrap(),
            sut: Waveform::mono(s, 48000).unwrap(),
            applied_lag: 0,
            gain_ref: 1.0,
            gain_sut: 1.0,
            trim_head: 0,
            trim_tail: 0,
        }
    }

    #[test]
    fn identical_signals_have_zero_lag() {
        let x = Waveform::mono(noise(4000, 1), 48000).unwrap();
        let (_, _, lag) = delay_compensate(&x, &x, 1000).unwrap();
        assert_eq!(lag, 0);
    }

    #[test]
    fn constructed_delay_of_480() {
        let x = noise(20000, 2);
        let mut y = vec![0.0; 480];
        y.extend_from_slice(&x[..20000 - 480]);
        let (r, s, lag) = delay_compensate(
            &Waveform::mono(x, 48000).unwrap(),
            &Waveform::mono(y, 48000).unwrap(),
            4800,
        )
        .unwrap();
        assert_eq!(lag, 480);
        assert_eq!(r.len(), s.len());
        assert_eq!(r.channels[0][..100], s.channels[0][..100]);
    }

    #[test]
    fn negative_lag_when_sut_leads() {
        let x = noise(20000, 3);
        let y = x[200..].to_vec();
        let (_, _, lag) = delay_compensate(
            &Waveform::mono(x, 48000).unwrap(),
            &Waveform::mono(y, 48000).unwrap(),
            1000,
        )
        .unwrap();
        assert_eq!(lag, -200);
    }

    #[test]
    fn short_signals_rejected() {
        let x = Waveform::mono(noise(100, 4), 48000).unwrap();
        assert!(matches!(
            delay_compensate(&x, &x, 60),
            Err(Error::TooShortForLag { .. })
        ));
    }

    #[test]
    fn level_gain_follows_log_identity() {
        // full-scale sine has rms 1/sqrt(2); pick amplitude giving 80 dB SPL
        let amp = 10f64.powf(-20.0 / 20.0) * 2f64.sqrt();
        let x: Vec<f64> = (0..48000)
            .map(|i| amp * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 48000.0).sin())
            .collect();
        let p = pair(x.clone(), x);
        assert!((level_db(&p.reference) - 80.0).abs() < 1e-9);
        let out = scale_levels(p, 65.0).unwrap();
        assert!((out.gain_ref - 10f64.powf(-15.0 / 20.0)).abs() < 1e-12);
        assert_eq!(out.gain_ref, out.gain_sut);
    }

    #[test]
    fn silent_reference_cannot_be_scaled() {
        let p = pair(vec![0.0; 100], vec![0.1; 100]);
        assert!(matches!(scale_levels(p, 65.0), Err(Error::SilentReference)));
    }

    #[test]
    fn trims_one_second_head() {
        let mut x = vec![0.0; 48000];
        x.extend(noise(48000, 5));
        let out = trim_silence(pair(x.clone(), x), 200.0 / 32768.0, 1024).unwrap();
        assert!(out.trim_head.abs_diff(48000) <= 1024, "{}", out.trim_head);
        assert_eq!(out.reference.len(), out.sut.len());
    }

    #[test]
    fn no_silence_no_trim() {
        let x = noise(10000, 6);
        let out = trim_silence(pair(x.clone(), x.clone()), 200.0 / 32768.0, 1024).unwrap();
        assert_eq!(out.trim_head, 0);
        assert_eq!(out.trim_tail, 0);
        assert_eq!(out.reference.channels[0], x);
    }

    #[test]
    fn all_silent_pair_rejected() {
        let p = pair(vec![0.0; 5000], vec![0.0; 5000]);
        assert!(matches!(
            trim_silence(p, 200.0 / 32768.0, 1024),
            Err(Error::AllSilent)
        ));
    }
}
