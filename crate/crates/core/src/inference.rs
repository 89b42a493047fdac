//! Frame-wise quality terms and the time-averaged score.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::features::FeatureSeries;
use crate::model::{BasisFunction, CsmModel, Dpw, CEM_COUNT, DM_COUNT};
use crate::stats;

/// Raw (un-normalized) predictor for one frame: `DPW(cem) * BF(dm)`, or the
/// basis function output alone when there is no weight.
pub fn raw_predictor(
    bf: &BasisFunction,
    dpw: Option<&Dpw>,
    dm: &[f64; DM_COUNT],
    cem: &[f64; CEM_COUNT],
) -> f64 {
    let q = bf.eval(dm[bf.dm.index()]);
    match dpw {
        Some(d) => d.eval(cem) * q,
        None => q,
    }
}

/// Time mean of [`raw_predictor`] over all frames of an item.
pub fn mean_raw_predictor(bf: &BasisFunction, dpw: Option<&Dpw>, f: &FeatureSeries) -> f64 {
    let vals: Vec<f64> = f
        .dm
        .iter()
        .zip(&f.cem)
        .map(|(d, c)| raw_predictor(bf, dpw, d, c))
        .collect();
    stats::mean(&vals)
}

/// Quality term contributions, one row per frame, one column per term.
#[derive(Debug, Clone, PartialEq)]
pub struct TermMatrix {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TermMatrix {
    /// Time mean of each term.
    pub fn column_means(&self) -> Vec<f64> {
        (0..self.ids.len())
            .map(|k| {
                let col: Vec<f64> = self.rows.iter().map(|r| r[k]).collect();
                stats::mean(&col)
            })
            .collect()
    }
}

fn check_hash(features: &FeatureSeries, model: &CsmModel) -> Result<()> {
    if features.config_hash != model.config_hash {
        return Err(CoreError::ConfigMismatch {
            model: model.config_hash.clone(),
            features: features.config_hash.clone(),
        });
    }
    Ok(())
}

pub fn quality_terms(features: &FeatureSeries, model: &CsmModel) -> Result<TermMatrix> {
    check_hash(features, model)?;
    // Resolve references once; validate() guarantees they exist.
    let mut resolved = Vec::with_capacity(model.terms.len());
    for t in &model.terms {
        let bf = match t.bf {
            Some(dm) => Some(model.bf(dm).ok_or_else(|| {
                CoreError::InvalidModel(alloc::format!("missing basis function {}", dm.name()))
            })?),
            None => None,
        };
        let dpw = match &t.dpw {
            Some(id) => Some(model.dpw(id).ok_or_else(|| {
                CoreError::InvalidModel(alloc::format!("missing DPW {id}"))
            })?),
            None => None,
        };
        resolved.push((t, bf, dpw));
    }
    let rows = features
        .dm
        .iter()
        .zip(&features.cem)
        .map(|(dm, cem)| {
            resolved
                .iter()
                .map(|&(t, bf, dpw)| match bf {
                    None => t.coefficient,
                    Some(bf) => {
                        let p = raw_predictor(bf, dpw, dm, cem);
                        t.coefficient * (p - t.z_mean) / t.z_std
                    }
                })
                .collect()
        })
        .collect();
    Ok(TermMatrix {
        ids: model.terms.iter().map(|t| t.id.clone()).collect(),
        rows,
    })
}

/// Output of [`score`].
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    /// Per-frame quality metric (sum of all terms).
    pub qm_series: Vec<f64>,
    /// Time mean of `qm_series` clamped to the MUSHRA range.
    pub score: f64,
    /// Time mean before clamping.
    pub unclamped: f64,
    pub terms: TermMatrix,
}

pub fn score(features: &FeatureSeries, model: &CsmModel) -> Result<Score> {
    if features.is_empty() {
        return Err(CoreError::EmptySeries);
    }
    let terms = quality_terms(features, model)?;
    let qm_series: Vec<f64> = terms.rows.iter().map(|r| r.iter().sum()).collect();
    let unclamped = stats::mean(&qm_series);
    Ok(Score {
        qm_series,
        score: unclamped.clamp(0.0, 100.0),
        unclamped,
        terms,
    })
}
