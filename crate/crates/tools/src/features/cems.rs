//! Perceptual-streaming (EPN) and informational-masking (PDEV) effect sizes.

use crate::error::{Error, Result};
use crate::frontend::ExcitationPattern;

/// Analysis window of both measures, seconds.
pub const WINDOW_SECONDS: f64 = 0.5;

fn window_bounds(t: usize, len: usize, half: usize) -> (usize, usize) {
    (t.saturating_sub(half), (t + half + 1).min(len))
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v)
}

/// Per-frame `(EPN, PDEV)` of one channel on the internal frame grid.
///
/// PDEV is the coefficient of variation of the band-summed reference
/// excitation in a centred window. EPN is one minus the absolute
/// correlation between the band-summed error envelope and the reference
/// envelope in the same window. EPN is 0 where the error vanishes, 1 where
/// exactly one of the two envelopes is constant, and 0 where both are.
pub fn extract_cem_epn_pdev(e_ref: &ExcitationPattern, e_sut: &ExcitationPattern) -> Result<Vec<(f64, f64)>> {
    if e_ref.n_frames() != e_sut.n_frames() || e_ref.n_bands() != e_sut.n_bands() {
        return Err(Error::ShapeMismatch("CEM inputs differ in shape".into()));
    }
    let t_len = e_ref.n_frames();
    let half = ((WINDOW_SECONDS / e_ref.frame_hop) / 2.0).round() as usize;
    let env: Vec<f64> = e_ref.energy.iter().map(|r| r.iter().sum()).collect();
    let err: Vec<f64> = e_ref
        .energy
        .iter()
        .zip(&e_sut.energy)
        .map(|(r, s)| r.iter().zip(s).map(|(a, b)| (a - b).abs()).sum())
        .collect();
    Ok((0..t_len)
        .map(|t| {
            let (lo, hi) = window_bounds(t, t_len, half);
            let (m, v) = mean_var(&env[lo..hi]);
            let pdev = if m > 0.0 { v.sqrt() / m } else { 0.0 };

            let w_err = &err[lo..hi];
            let epn = if w_err.iter().all(|&x| x == 0.0) {
                0.0
            } else {
                let (me, ve) = mean_var(w_err);
                match (ve > 0.0, v > 0.0) {
                    (false, false) => 0.0,
                    (true, false) | (false, true) => 1.0,
                    (true, true) => {
                        let cov = w_err
                            .iter()
                            .zip(&env[lo..hi])
                            .map(|(a, b)| (a - me) * (b - m))
                            .sum::<f64>()
                            / w_err.len() as f64;
                        let r = (cov / (ve * v).sqrt()).clamp(-1.0, 1.0);
                        1.0 - r.abs()
                    }
                }
            };
            (epn, pdev)
        })
        .collect())
}
