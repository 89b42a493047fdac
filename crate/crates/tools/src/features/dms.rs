//! Distortion metrics on the internal 20 ms grid.

use csm_core::DM_COUNT;

use crate::error::{Error, Result};
use crate::frontend::{ExcitationPattern, ModulationPattern};

/// Masker weight inside the partial-loudness expressions.
const MASKER_WEIGHT: f64 = 0.5;
/// Weight of the missing-components term in NoiseLoudness.
const MISSING_WEIGHT: f64 = 0.5;
/// Time constant of the level and per-band gain adaptation used by
/// LinDist, seconds.
const GAIN_ADAPT_TAU: f64 = 0.2;
/// Offset in the RmsModDiff normalisation.
const MOD_OFFSET: f64 = 1.0;
/// Weight of lost (as opposed to added) modulation in RmsModDiff.
const LOST_MOD_WEIGHT: f64 = 0.1;
/// Lower bound of the per-band noise-to-mask ratio, dB.
pub const SEGNMR_FLOOR_DB: f64 = -60.0;

/// Loudness of `signal` partially masked by `masker` in a band with
/// internal-noise energy `thr`. Zero when `signal` is zero.
fn partial_loudness(signal: f64, masker: f64, thr: f64, alpha: f64) -> f64 {
    let base = thr + MASKER_WEIGHT * masker;
    (base + signal).powf(alpha) - base.powf(alpha)
}

/// Masking offset in dB below the excitation, by band position in Bark.
fn mask_offset_db(z: f64) -> f64 {
    if z <= 12.0 {
        3.0
    } else {
        0.25 * z
    }
}

fn check_shapes(a: &ExcitationPattern, b: &ExcitationPattern) -> Result<()> {
    if a.n_frames() != b.n_frames() || a.n_bands() != b.n_bands() || a.fine_floor.len() != b.fine_floor.len() {
        return Err(Error::ShapeMismatch(format!(
            "excitation patterns {}x{} and {}x{}",
            a.n_frames(),
            a.n_bands(),
            b.n_frames(),
            b.n_bands()
        )));
    }
    Ok(())
}

/// Harmonic structure of the error: normalised autocorrelation of the log
/// spectral ratio over spectral lag, peak value past the main lobe, scaled
/// by the RMS of the log ratio.
pub fn error_harmonic_structure(p_ref: &[f64], p_sut: &[f64], floor: &[f64]) -> f64 {
    let f: Vec<f64> = p_ref
        .iter()
        .zip(p_sut)
        .zip(floor)
        .map(|((&r, &s), &e)| (s + e).ln() - (r + e).ln())
        .collect();
    let n = f.len();
    if n < 8 || f.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let rms = (f.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let m = f.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = f.iter().map(|v| v - m).collect();
    let max_lag = n / 2;
    let mut main_lobe_done = false;
    let mut peak: f64 = 0.0;
    for l in 1..=max_lag {
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for k in 0..n - l {
            sxy += c[k] * c[k + l];
            sxx += c[k] * c[k];
            syy += c[k + l] * c[k + l];
        }
        if sxx <= 0.0 || syy <= 0.0 {
            continue;
        }
        let r = sxy / (sxx * syy).sqrt();
        if !main_lobe_done {
            if r < 0.0 {
                main_lobe_done = true;
            }
            continue;
        }
        peak = peak.max(r);
    }
    peak * rms
}

/// Per-frame DMs of one channel, columns in `Dm::ALL` order.
pub fn extract_dms(
    e_ref: &ExcitationPattern,
    e_sut: &ExcitationPattern,
    m_ref: &ModulationPattern,
    m_sut: &ModulationPattern,
) -> Result<Vec<[f64; DM_COUNT]>> {
    check_shapes(e_ref, e_sut)?;
    if m_ref.frames.len() != e_ref.n_frames() || m_sut.frames.len() != e_ref.n_frames() {
        return Err(Error::ShapeMismatch("modulation pattern length".into()));
    }
    let t_len = e_ref.n_frames();
    let nb = e_ref.n_bands();
    let alpha = e_ref.alpha;
    let adapt = (-e_ref.frame_hop / GAIN_ADAPT_TAU).exp();
    let mut acc_ref = vec![0.0; nb];
    let mut acc_sut = vec![0.0; nb];
    let (mut tot_ref, mut tot_sut) = (0.0, 0.0);
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let er = &e_ref.energy[t];
        let es = &e_sut.energy[t];
        let mr = &m_ref.frames[t];
        let ms = &m_sut.frames[t];

        let mut mod_sq = 0.0;
        for b in 0..nb {
            let w = if ms[b] >= mr[b] { 1.0 } else { LOST_MOD_WEIGHT };
            let d = w * (ms[b] - mr[b]).abs() / (MOD_OFFSET + mr[b]);
            mod_sq += d * d;
        }
        let rms_mod_diff = (mod_sq / nb as f64).sqrt();

        // broadband level ratio, divided out so LinDist sees spectral shape only
        tot_ref = adapt * tot_ref + er.iter().sum::<f64>();
        tot_sut = adapt * tot_sut + es.iter().sum::<f64>();
        let thr_sum: f64 = e_ref.floor.iter().sum();
        let level = (tot_sut + thr_sum) / (tot_ref + thr_sum);

        let mut noise = 0.0;
        let mut missing = 0.0;
        let mut lin = 0.0;
        let mut nmr = 0.0;
        for b in 0..nb {
            let thr = e_ref.floor[b];
            let added = (es[b] - er[b]).max(0.0);
            let lost = (er[b] - es[b]).max(0.0);
            noise += partial_loudness(added, er[b], thr, alpha);
            missing += partial_loudness(lost, es[b], thr, alpha);

            acc_ref[b] = adapt * acc_ref[b] + er[b];
            acc_sut[b] = adapt * acc_sut[b] + es[b];
            let gain = (acc_sut[b] / level + thr) / (acc_ref[b] + thr);
            let adapted = gain * er[b];
            lin += partial_loudness((er[b] - adapted).max(0.0), adapted, thr, alpha);

            let err = (es[b] - er[b]).abs();
            let mask = er[b] * 10f64.powf(-mask_offset_db(e_ref.band_centers[b]) / 10.0) + thr;
            let db = if err > 0.0 {
                (10.0 * (err / mask).log10()).max(SEGNMR_FLOOR_DB)
            } else {
                SEGNMR_FLOOR_DB
            };
            nmr += db;
        }
        let ehs = error_harmonic_structure(&e_ref.fine[t], &e_sut.fine[t], &e_ref.fine_floor);
        out.push([
            rms_mod_diff,
            noise + MISSING_WEIGHT * missing,
            lin,
            nmr / nb as f64,
            ehs,
        ]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_loudness_zero_without_signal() {
        assert_eq!(partial_loudness(0.0, 1e-3, 1e-9, 0.23), 0.0);
        assert!(partial_loudness(1e-4, 1e-3, 1e-9, 0.23) > 0.0);
    }

    #[test]
    fn ehs_is_zero_for_identical_spectra() {
        let p: Vec<f64> = (0..100).map(|k| 1e-4 / (1.0 + k as f64)).collect();
        assert_eq!(error_harmonic_structure(&p, &p, &vec![1e-12; 100]), 0.0);
    }

    #[test]
    fn periodic_error_beats_random_error() {
        let n = 300;
        let base: Vec<f64> = vec![1e-4; n];
        let comb: Vec<f64> = (0..n)
            .map(|k| if k % 12 == 0 { 1e-2 } else { 1e-4 })
            .collect();
        let mut s = 7u64;
        let rand: Vec<f64> = (0..n)
            .map(|k| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                if (s >> 60) == 0 && k > 0 {
                    1e-2
                } else {
                    1e-4
                }
            })
            .collect();
        let fl = vec![1e-12; n];
        let a = error_harmonic_structure(&base, &comb, &fl);
        let b = error_harmonic_structure(&base, &rand, &fl);
        assert!(a > 2.0 * b, "{a} {b}");
    }
}
