use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{CEM_COUNT, DM_COUNT};
use crate::stats;

/// Per-frame distortion and cognitive-effect metrics of one REF/SUT pair.
///
/// Columns follow [`crate::Dm::ALL`] and [`crate::Cem::ALL`]. Item means are
/// the plain time averages of the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSeries {
    pub config_hash: String,
    pub hop_seconds: f64,
    pub dm: Vec<[f64; DM_COUNT]>,
    pub cem: Vec<[f64; CEM_COUNT]>,
    pub item_mean_dm: [f64; DM_COUNT],
    pub item_mean_cem: [f64; CEM_COUNT],
}

impl FeatureSeries {
    pub fn new(
        config_hash: impl Into<String>,
        hop_seconds: f64,
        dm: Vec<[f64; DM_COUNT]>,
        cem: Vec<[f64; CEM_COUNT]>,
    ) -> Result<Self> {
        if dm.len() != cem.len() {
            return Err(CoreError::LengthMismatch(dm.len(), cem.len()));
        }
        if dm.is_empty() {
            return Err(CoreError::EmptySeries);
        }
        let item_mean_dm = column_means(&dm);
        let item_mean_cem = column_means(&cem);
        Ok(Self {
            config_hash: config_hash.into(),
            hop_seconds,
            dm,
            cem,
            item_mean_dm,
            item_mean_cem,
        })
    }

    pub fn len(&self) -> usize {
        self.dm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dm.is_empty()
    }
}

fn column_means<const N: usize>(rows: &[[f64; N]]) -> [f64; N] {
    let mut out = [0.0; N];
    let mut col = Vec::with_capacity(rows.len());
    for (k, o) in out.iter_mut().enumerate() {
        col.clear();
        col.extend(rows.iter().map(|r| r[k]));
        *o = stats::mean(&col);
    }
    out
}
