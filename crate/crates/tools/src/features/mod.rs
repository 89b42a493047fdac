//! Per-frame DM and CEM extraction for aligned REF/SUT pairs.

pub mod cache;
pub mod cems;
pub mod dms;
pub mod speech;

use std::sync::Arc;

use csm_core::{FeatureSeries, CEM_COUNT, DM_COUNT};

use crate::error::{Error, Result};
use crate::frontend::{compute_excitation, compute_modulation, ExcitationPattern, FrontEndConfig};
use crate::pipeline::AlignedSignalPair;
use speech::{LogisticSpeechClassifier, SpeechClassifier};

/// Target granularity of the feature series, seconds.
pub const FEATURE_HOP_SECONDS: f64 = 0.1;

/// Front-end output kept for debugging dumps.
#[derive(Debug, Clone)]
pub struct Internals {
    pub reference: Vec<ExcitationPattern>,
    pub sut: Vec<ExcitationPattern>,
}

#[derive(Clone)]
pub struct FeatureExtractor {
    pub frontend: FrontEndConfig,
    pub classifier: Arc<dyn SpeechClassifier>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("frontend", &self.frontend)
            .finish_non_exhaustive()
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(FrontEndConfig::default())
    }
}

impl FeatureExtractor {
    /// Extractor using the bundled speech classifier.
    pub fn new(frontend: FrontEndConfig) -> Self {
        FeatureExtractor {
            frontend,
            classifier: Arc::new(LogisticSpeechClassifier::bundled()),
        }
    }

    pub fn with_classifier(frontend: FrontEndConfig, classifier: Arc<dyn SpeechClassifier>) -> Self {
        FeatureExtractor { frontend, classifier }
    }

    pub fn config_hash(&self) -> String {
        self.frontend.config_hash()
    }

    /// Internal frames per feature frame.
    pub fn group(&self) -> usize {
        ((FEATURE_HOP_SECONDS / self.frontend.hop_seconds()).round() as usize).max(1)
    }

    pub fn extract(&self, pair: &AlignedSignalPair) -> Result<FeatureSeries> {
        self.extract_detailed(pair).map(|(f, _)| f)
    }

    /// Features plus the excitation patterns they were computed from.
    pub fn extract_detailed(&self, pair: &AlignedSignalPair) -> Result<(FeatureSeries, Internals)> {
        let r = &pair.reference;
        let s = &pair.sut;
        if r.len() != s.len() || r.n_channels() != s.n_channels() || r.sample_rate != s.sample_rate {
            return Err(Error::ShapeMismatch("REF and SUT differ in shape".into()));
        }
        let ex_r = compute_excitation(r, &self.frontend)?;
        let ex_s = compute_excitation(s, &self.frontend)?;
        let t_len = ex_r[0].n_frames();
        let n_ch = ex_r.len() as f64;

        let mut dm = vec![[0.0; DM_COUNT]; t_len];
        let mut epn_pdev = vec![(0.0, 0.0); t_len];
        for (er, es) in ex_r.iter().zip(&ex_s) {
            let mr = compute_modulation(er, self.frontend.modulation_tau)?;
            let ms = compute_modulation(es, self.frontend.modulation_tau)?;
            let d = dms::extract_dms(er, es, &mr, &ms)?;
            let c = cems::extract_cem_epn_pdev(er, es)?;
            for t in 0..t_len {
                for k in 0..DM_COUNT {
                    dm[t][k] += d[t][k] / n_ch;
                }
                epn_pdev[t].0 += c[t].0 / n_ch;
                epn_pdev[t].1 += c[t].1 / n_ch;
            }
        }

        let group = self.group();
        let n_out = t_len.div_ceil(group);
        let mut dm_out = Vec::with_capacity(n_out);
        let mut cem_out = Vec::with_capacity(n_out);
        let decisions = self.classifier.decisions(&r.downmix());
        let prob = speech::synchronize(&decisions, n_out, group * self.frontend.hop);
        for (k, &p) in prob.iter().enumerate() {
            let lo = k * group;
            let hi = ((k + 1) * group).min(t_len);
            let n = (hi - lo) as f64;
            let mut row = [0.0; DM_COUNT];
            let (mut epn, mut pdev) = (0.0, 0.0);
            for t in lo..hi {
                for j in 0..DM_COUNT {
                    row[j] += dm[t][j];
                }
                epn += epn_pdev[t].0;
                pdev += epn_pdev[t].1;
            }
            for v in row.iter_mut() {
                *v /= n;
            }
            dm_out.push(row);
            let cem: [f64; CEM_COUNT] = [p.clamp(0.0, 1.0), epn / n, pdev / n];
            cem_out.push(cem);
        }
        let hop = group as f64 * self.frontend.hop_seconds();
        let series = FeatureSeries::new(self.config_hash(), hop, dm_out, cem_out)?;
        Ok((
            series,
            Internals {
                reference: ex_r,
                sut: ex_s,
            },
        ))
    }
}
