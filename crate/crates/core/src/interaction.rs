//! Distortion salience, the CEM/salience interaction metric, and the
//! exhaustive DPW parameter search.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{BasisFunction, Cem, Dm, Dpw, DpwFactor, DpwShape};
use crate::stats;

/// Positive half of the steepness grid. The negative half mirrors it: a
/// logistic with steepness `-k` equals `1 -` the one with `k`, which has the
/// same absolute correlation and is expressed through the `inverted` flag.
pub const STEEPNESS_GRID: [f64; 8] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

/// Number of quantile-spaced midpoints searched per CEM.
pub const MIDPOINT_COUNT: usize = 41;

/// Salience of one DM for one signal: Pearson correlation, over the signal's
/// treatments, between subjective scores and basis-function outputs of the
/// item-mean DM. `None` when undefined (fewer than three treatments or zero
/// variance on either side).
pub fn compute_salience(bf: &BasisFunction, dm_values: &[f64], scores: &[f64]) -> Option<f64> {
    if dm_values.len() != scores.len() || scores.len() < 3 {
        return None;
    }
    let q: Vec<f64> = dm_values.iter().map(|&x| bf.eval(x)).collect();
    stats::pearson(scores, &q)
}

/// Absolute Pearson correlation across signals between salience and DPW
/// output, skipping signals whose salience is undefined.
pub fn interaction_metric(s_row: &[Option<f64>], dpw_values: &[f64]) -> Result<f64> {
    if s_row.len() != dpw_values.len() {
        return Err(CoreError::LengthMismatch(s_row.len(), dpw_values.len()));
    }
    let (s, w): (Vec<f64>, Vec<f64>) = s_row
        .iter()
        .zip(dpw_values)
        .filter_map(|(s, &w)| s.map(|s| (s, w)))
        .unzip();
    if s.len() < 3 {
        return Err(CoreError::TooFewSamples {
            needed: 3,
            got: s.len(),
        });
    }
    stats::pearson(&s, &w)
        .map(libm::fabs)
        .ok_or(CoreError::ZeroVariance)
}

/// Result of optimizing one CEM/DM interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionCandidate {
    pub id: String,
    pub dm: Dm,
    pub dpw: Dpw,
    /// Metric on the raw CEM values.
    pub c_before: f64,
    /// Metric after the search; never below `c_before`.
    pub c_after: f64,
    /// `c_after` carrying the sign of the correlation between salience and
    /// the non-inverted weight.
    pub signed_c: f64,
}

impl InteractionCandidate {
    pub fn sources(&self) -> Vec<Cem> {
        self.dpw.factors.iter().map(|f| f.cem).collect()
    }
}

struct Defined {
    s: Vec<f64>,
    idx: Vec<usize>,
}

fn defined(s_row: &[Option<f64>]) -> Defined {
    let mut s = Vec::new();
    let mut idx = Vec::new();
    for (j, v) in s_row.iter().enumerate() {
        if let Some(v) = v {
            s.push(*v);
            idx.push(j);
        }
    }
    Defined { s, idx }
}

fn midpoints(values: &[f64]) -> Vec<f64> {
    let sorted = stats::sorted(values);
    let mut m: Vec<f64> = (0..MIDPOINT_COUNT)
        .map(|i| stats::quantile_sorted(&sorted, i as f64 / (MIDPOINT_COUNT - 1) as f64))
        .collect();
    m.dedup();
    m
}

fn ramp_of(values: &[f64]) -> DpwShape {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    DpwShape::Ramp { lo, hi }
}

fn abs_corr(s: &[f64], w: &[f64]) -> Option<f64> {
    stats::pearson(s, w).map(libm::fabs)
}

/// Finish a candidate: choose the inversion from the correlation sign.
fn finish(
    id: &str,
    dm: Dm,
    factors: Vec<DpwFactor>,
    s: &[f64],
    cems: &[&[f64]],
    c_before: f64,
    c_after: f64,
) -> InteractionCandidate {
    let mut dpw = Dpw {
        id: id.into(),
        factors,
        inverted: false,
    };
    let w: Vec<f64> = (0..s.len())
        .map(|j| {
            let mut frame = [0.0; crate::model::CEM_COUNT];
            for (f, vals) in dpw.factors.iter().zip(cems) {
                frame[f.cem.index()] = vals[j];
            }
            dpw.eval(&frame)
        })
        .collect();
    let r = stats::pearson(s, &w).unwrap_or(0.0);
    dpw.inverted = r < 0.0;
    InteractionCandidate {
        id: id.into(),
        dm,
        dpw,
        c_before,
        c_after,
        signed_c: if r < 0.0 { -c_after } else { c_after },
    }
}

/// Exhaustive search of a single-CEM logistic DPW maximizing the interaction
/// metric against one DM's salience row.
///
/// `cem_means[j]` is signal `j`'s mean CEM value. The search covers
/// [`STEEPNESS_GRID`] (both signs, see there) times [`MIDPOINT_COUNT`]
/// quantile-spaced midpoints. The ramp over the observed CEM range is part of
/// the family as the zero-steepness limit and realizes `c_before` exactly, so
/// `c_after >= c_before` always holds.
pub fn optimize_dpw(
    id: &str,
    cem: Cem,
    dm: Dm,
    cem_means: &[f64],
    s_row: &[Option<f64>],
) -> Result<InteractionCandidate> {
    if cem_means.len() != s_row.len() {
        return Err(CoreError::LengthMismatch(cem_means.len(), s_row.len()));
    }
    let d = defined(s_row);
    if d.s.len() < 3 {
        return Err(CoreError::TooFewSamples {
            needed: 3,
            got: d.s.len(),
        });
    }
    let c: Vec<f64> = d.idx.iter().map(|&j| cem_means[j]).collect();
    if c.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite);
    }
    let c_before = abs_corr(&d.s, &c);

    let mut best: Option<(f64, DpwShape)> = None;
    let mut w = alloc::vec![0.0; c.len()];
    for &k in &STEEPNESS_GRID {
        for &m in &midpoints(&c) {
            let shape = DpwShape::Logistic {
                steepness: k,
                midpoint: m,
            };
            for (wi, &ci) in w.iter_mut().zip(&c) {
                *wi = shape.eval(ci);
            }
            if let Some(v) = abs_corr(&d.s, &w) {
                if best.as_ref().is_none_or(|b| v > b.0) {
                    best = Some((v, shape));
                }
            }
        }
    }
    let (c_after, shape) = match (best, c_before) {
        (Some((g, shape)), Some(cb)) if g >= cb => (g, shape),
        (_, Some(cb)) => (cb, ramp_of(&c)),
        (Some((g, shape)), None) => (g, shape),
        (None, None) => return Err(CoreError::NoDefinedGridPoint),
    };
    Ok(finish(
        id,
        dm,
        alloc::vec![DpwFactor { cem, shape }],
        &d.s,
        &[&c],
        c_before.unwrap_or(0.0),
        c_after,
    ))
}

/// Search for a two-factor DPW `w_epn(EPN) * w_pdev(PDEV)`.
///
/// Each factor runs over the signed steepness grid and the quantile
/// midpoints. The raw composite CEM is the product of the two ramps over the
/// observed ranges, which is also a member of the searched family.
pub fn optimize_composite_dpw(
    id: &str,
    dm: Dm,
    epn_means: &[f64],
    pdev_means: &[f64],
    s_row: &[Option<f64>],
) -> Result<InteractionCandidate> {
    if epn_means.len() != s_row.len() || pdev_means.len() != s_row.len() {
        return Err(CoreError::LengthMismatch(epn_means.len(), s_row.len()));
    }
    let d = defined(s_row);
    if d.s.len() < 3 {
        return Err(CoreError::TooFewSamples {
            needed: 3,
            got: d.s.len(),
        });
    }
    let e: Vec<f64> = d.idx.iter().map(|&j| epn_means[j]).collect();
    let p: Vec<f64> = d.idx.iter().map(|&j| pdev_means[j]).collect();
    if e.iter().chain(&p).any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite);
    }

    let factor_table = |vals: &[f64]| -> Vec<(DpwShape, Vec<f64>)> {
        let mut out = Vec::new();
        for &k in &STEEPNESS_GRID {
            for sign in [1.0, -1.0] {
                for &m in &midpoints(vals) {
                    let shape = DpwShape::Logistic {
                        steepness: sign * k,
                        midpoint: m,
                    };
                    out.push((shape, vals.iter().map(|&v| shape.eval(v)).collect()));
                }
            }
        }
        out
    };
    let te = factor_table(&e);
    let tp = factor_table(&p);

    let ramp_e = ramp_of(&e);
    let ramp_p = ramp_of(&p);
    let raw: Vec<f64> = e
        .iter()
        .zip(&p)
        .map(|(&a, &b)| ramp_e.eval(a) * ramp_p.eval(b))
        .collect();
    let c_before = abs_corr(&d.s, &raw);

    let mut best: Option<(f64, usize, usize)> = None;
    let mut w = alloc::vec![0.0; d.s.len()];
    for (a, (_, we)) in te.iter().enumerate() {
        for (b, (_, wp)) in tp.iter().enumerate() {
            for ((wi, x), y) in w.iter_mut().zip(we).zip(wp) {
                *wi = x * y;
            }
            if let Some(v) = abs_corr(&d.s, &w) {
                if best.is_none_or(|bb| v > bb.0) {
                    best = Some((v, a, b));
                }
            }
        }
    }
    let (c_after, se, sp) = match (best, c_before) {
        (Some((g, a, b)), Some(cb)) if g >= cb => (g, te[a].0, tp[b].0),
        (_, Some(cb)) => (cb, ramp_e, ramp_p),
        (Some((g, a, b)), None) => (g, te[a].0, tp[b].0),
        (None, None) => return Err(CoreError::NoDefinedGridPoint),
    };
    Ok(finish(
        id,
        dm,
        alloc::vec![
            DpwFactor {
                cem: Cem::Epn,
                shape: se
            },
            DpwFactor {
                cem: Cem::Pdev,
                shape: sp
            },
        ],
        &d.s,
        &[&e, &p],
        c_before.unwrap_or(0.0),
        c_after,
    ))
}
