//! Fitting a CSM model from subjective scores and extracted features.
//!
//! Basis functions are fitted on the `bf` split. Salience, DPW search and
//! the stepwise regression use the `interaction` split.

pub mod database;
pub mod stepwise;

use std::collections::BTreeMap;

use csm_core::{
    compute_salience, fit_basis_function, inference::mean_raw_predictor, optimize_composite_dpw, optimize_dpw,
    stats, BasisFunction, Cem, CsmModel, Dm, FeatureSeries, InteractionCandidate, QualityTerm, CEM_COUNT,
    DM_COUNT, MODEL_FORMAT_VERSION,
};
use csm_core::model::{FitSummary, Provenance};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use database::Split;
use stepwise::{stepwise, StepwiseConfig};

/// Features and subjective score (MUSHRA scale) of one database item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFeatures {
    pub signal_id: String,
    pub treatment_id: String,
    pub split: Option<Split>,
    pub score: f64,
    pub features: FeatureSeries,
}

/// A CEM source feeding a DPW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CemSource {
    Single(Cem),
    /// Product of an EPN factor and a PDEV factor.
    EpnPdev,
}

impl CemSource {
    pub fn name(self) -> &'static str {
        match self {
            CemSource::Single(c) => c.name(),
            CemSource::EpnPdev => "EPN/PDEV",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub id: String,
    pub source: CemSource,
    pub dm: Dm,
}

/// Every CEM paired with every DM (DPW1 to DPW15, CEM-major), then the
/// EPN/PDEV composite on SegNMR (DPW16) and on NoiseLoudness (DPW17).
pub fn default_candidates() -> Vec<CandidateSpec> {
    let mut out = Vec::new();
    for c in Cem::ALL {
        for dm in Dm::ALL {
            out.push(CandidateSpec {
                id: format!("DPW{}", out.len() + 1),
                source: CemSource::Single(c),
                dm,
            });
        }
    }
    for dm in [Dm::SegNmr, Dm::NoiseLoudness] {
        out.push(CandidateSpec {
            id: format!("DPW{}", out.len() + 1),
            source: CemSource::EpnPdev,
            dm,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub stepwise: StepwiseConfig,
    /// Offer the regression only the strongest single-CEM interaction per
    /// DM (by |C|) plus the composite candidates.
    pub shortlist: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            stepwise: StepwiseConfig::default(),
            shortlist: true,
        }
    }
}

/// One line of the candidate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub id: String,
    pub cem: String,
    pub dm: String,
    pub c_before: Option<f64>,
    pub c_after: Option<f64>,
    pub signed_c: Option<f64>,
    pub inverted: Option<bool>,
    pub status: String,
}

/// One line of the coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub id: String,
    pub expression: String,
    pub coefficient: f64,
    pub z_mean: f64,
    pub z_std: f64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceRow {
    pub signal_id: String,
    pub salience: [Option<f64>; DM_COUNT],
    pub cem_means: [f64; CEM_COUNT],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config_hash: String,
    pub bf_items: usize,
    pub interaction_items: usize,
    pub interaction_signals: usize,
    pub salience: Vec<SalienceRow>,
    pub candidates: Vec<CandidateRow>,
    pub coefficients: Vec<CoefficientRow>,
    pub fit: FitSummary,
    pub p_threshold: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutput {
    pub model: CsmModel,
    pub report: CalibrationReport,
    /// Optimised candidates, in candidate order, without rejected ones.
    pub candidates: Vec<InteractionCandidate>,
}

/// Fits one basis function per DM on the BF split.
pub fn fit_basis_functions(items: &[&ItemFeatures]) -> Result<Vec<BasisFunction>> {
    Dm::ALL
        .iter()
        .map(|&dm| {
            let samples: Vec<(f64, f64)> = items
                .iter()
                .map(|it| (it.features.item_mean_dm[dm.index()], it.score))
                .collect();
            Ok(fit_basis_function(dm, &samples)?)
        })
        .collect()
}

/// Per-signal salience rows for the given items, ordered by signal id.
pub fn salience_table(items: &[&ItemFeatures], bfs: &[BasisFunction]) -> Vec<SalienceRow> {
    let mut by_signal: BTreeMap<&str, Vec<&ItemFeatures>> = BTreeMap::new();
    for it in items {
        by_signal.entry(it.signal_id.as_str()).or_default().push(it);
    }
    by_signal
        .into_iter()
        .map(|(id, group)| {
            let scores: Vec<f64> = group.iter().map(|it| it.score).collect();
            let mut salience = [None; DM_COUNT];
            for (m, bf) in bfs.iter().enumerate() {
                let x: Vec<f64> = group.iter().map(|it| it.features.item_mean_dm[m]).collect();
                salience[m] = compute_salience(bf, &x, &scores);
            }
            let mut cem_means = [0.0; CEM_COUNT];
            for (c, v) in cem_means.iter_mut().enumerate() {
                let col: Vec<f64> = group.iter().map(|it| it.features.item_mean_cem[c]).collect();
                *v = stats::mean(&col);
            }
            SalienceRow {
                signal_id: id.to_string(),
                salience,
                cem_means,
            }
        })
        .collect()
}

/// Runs the DPW search for one candidate.
pub fn optimize_candidate(spec: &CandidateSpec, rows: &[SalienceRow]) -> csm_core::Result<InteractionCandidate> {
    let s: Vec<Option<f64>> = rows.iter().map(|r| r.salience[spec.dm.index()]).collect();
    let col = |c: Cem| -> Vec<f64> { rows.iter().map(|r| r.cem_means[c.index()]).collect() };
    match spec.source {
        CemSource::Single(c) => optimize_dpw(&spec.id, c, spec.dm, &col(c), &s),
        CemSource::EpnPdev => optimize_composite_dpw(&spec.id, spec.dm, &col(Cem::Epn), &col(Cem::Pdev), &s),
    }
}

pub fn calibrate(items: &[ItemFeatures], cfg: &CalibrationConfig) -> Result<CalibrationOutput> {
    calibrate_with(items, cfg, &default_candidates())
}

pub fn calibrate_with(
    items: &[ItemFeatures],
    cfg: &CalibrationConfig,
    specs: &[CandidateSpec],
) -> Result<CalibrationOutput> {
    let first = items.first().ok_or(Error::EmptyDatabase)?;
    let config_hash = first.features.config_hash.clone();
    if items.iter().any(|it| it.features.config_hash != config_hash) {
        return Err(Error::DegenerateDatabase("items were extracted with different front-end configs".into()));
    }
    let bf_items: Vec<&ItemFeatures> = items.iter().filter(|it| it.split == Some(Split::Bf)).collect();
    let int_items: Vec<&ItemFeatures> = items.iter().filter(|it| it.split == Some(Split::Interaction)).collect();
    if bf_items.is_empty() {
        return Err(Error::MissingSplit("bf"));
    }
    if int_items.is_empty() {
        return Err(Error::MissingSplit("interaction"));
    }
    let mut warnings = Vec::new();

    let bfs = fit_basis_functions(&bf_items)?;
    let rows = salience_table(&int_items, &bfs);
    let usable = rows.iter().filter(|r| r.salience.iter().any(Option::is_some)).count();
    if usable < 3 {
        return Err(Error::InsufficientSignals(format!(
            "{usable} signal(s) with defined salience, need 3"
        )));
    }

    let results: Vec<csm_core::Result<InteractionCandidate>> =
        specs.par_iter().map(|s| optimize_candidate(s, &rows)).collect();

    let mut table = Vec::new();
    let mut accepted: Vec<InteractionCandidate> = Vec::new();
    for (spec, res) in specs.iter().zip(results) {
        match res {
            Ok(c) => {
                table.push(CandidateRow {
                    id: spec.id.clone(),
                    cem: spec.source.name().into(),
                    dm: spec.dm.name().into(),
                    c_before: Some(c.c_before),
                    c_after: Some(c.c_after),
                    signed_c: Some(c.signed_c),
                    inverted: Some(c.dpw.inverted),
                    status: "not selected".into(),
                });
                accepted.push(c);
            }
            Err(e) => {
                warnings.push(format!("{} rejected: {e}", spec.id));
                table.push(CandidateRow {
                    id: spec.id.clone(),
                    cem: spec.source.name().into(),
                    dm: spec.dm.name().into(),
                    c_before: None,
                    c_after: None,
                    signed_c: None,
                    inverted: None,
                    status: format!("rejected: {e}"),
                });
            }
        }
    }

    // shortlist: strongest single-CEM interaction per DM, plus every composite
    let kept: Vec<bool> = accepted
        .iter()
        .map(|c| {
            let spec = specs.iter().find(|s| s.id == c.id).expect("candidate comes from a spec");
            if !cfg.shortlist || matches!(spec.source, CemSource::EpnPdev) {
                return true;
            }
            !accepted.iter().any(|o| {
                let os = specs.iter().find(|s| s.id == o.id).expect("candidate comes from a spec");
                o.dm == c.dm && matches!(os.source, CemSource::Single(_)) && o.c_after.abs() > c.c_after.abs()
            })
        })
        .collect();
    for (c, &k) in accepted.iter().zip(&kept) {
        if !k {
            if let Some(row) = table.iter_mut().find(|r| r.id == c.id) {
                row.status = "not shortlisted".into();
            }
        }
    }
    let accepted: Vec<InteractionCandidate> =
        accepted.into_iter().zip(&kept).filter(|(_, &k)| k).map(|(c, _)| c).collect();

    // predictor columns: weighted candidates first, then plain basis functions
    let y: Vec<f64> = int_items.iter().map(|it| it.score).collect();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for c in &accepted {
        let bf = &bfs[c.dm.index()];
        columns.push(int_items.iter().map(|it| mean_raw_predictor(bf, Some(&c.dpw), &it.features)).collect());
    }
    for bf in &bfs {
        columns.push(int_items.iter().map(|it| mean_raw_predictor(bf, None, &it.features)).collect());
    }
    let sw = stepwise(&columns, &y, &cfg.stepwise)?;
    if let Some(w) = &sw.warning {
        log::warn!("{w}");
        warnings.push(w.clone());
    }

    let mut terms = vec![QualityTerm::intercept(sw.intercept)];
    let mut dpws = Vec::new();
    let mut coefficients = vec![CoefficientRow {
        id: "Q0".into(),
        expression: "Intercept".into(),
        coefficient: sw.intercept,
        z_mean: 0.0,
        z_std: 1.0,
        p_value: None,
    }];
    for (k, &col) in sw.selected.iter().enumerate() {
        let (bf, dpw) = if col < accepted.len() {
            let c = &accepted[col];
            if let Some(row) = table.iter_mut().find(|r| r.id == c.id) {
                row.status = "selected".into();
            }
            dpws.push(c.dpw.clone());
            (c.dm, Some(c.dpw.id.clone()))
        } else {
            (Dm::ALL[col - accepted.len()], None)
        };
        let term = QualityTerm {
            id: format!("Q{}", k + 1),
            bf: Some(bf),
            dpw,
            coefficient: sw.coef[k],
            z_mean: sw.z_mean[col],
            z_std: sw.z_std[col],
        };
        coefficients.push(CoefficientRow {
            id: term.id.clone(),
            expression: term.expression(),
            coefficient: term.coefficient,
            z_mean: term.z_mean,
            z_std: term.z_std,
            p_value: Some(sw.p_values[k]),
        });
        terms.push(term);
    }

    let fit = FitSummary {
        r: sw.r,
        rmse: sw.rmse,
        adjusted_r2: sw.adjusted_r2,
        n_items: int_items.len(),
    };
    let mut settings = BTreeMap::new();
    settings.insert("stepwise.alpha".to_string(), cfg.stepwise.alpha.to_string());
    settings.insert("stepwise.bonferroni".to_string(), cfg.stepwise.bonferroni.to_string());
    settings.insert("stepwise.p_threshold".to_string(), sw.threshold.to_string());
    settings.insert("bf_items".to_string(), bf_items.len().to_string());
    settings.insert("interaction_items".to_string(), int_items.len().to_string());
    let model = CsmModel {
        format_version: MODEL_FORMAT_VERSION.to_string(),
        config_hash: config_hash.clone(),
        basis_functions: bfs,
        dpws,
        terms,
        provenance: Provenance {
            description: format!(
                "calibrated on {} BF items and {} interaction items",
                bf_items.len(),
                int_items.len()
            ),
            fit: Some(fit.clone()),
            settings,
        },
    };
    model.validate()?;
    Ok(CalibrationOutput {
        model,
        report: CalibrationReport {
            config_hash,
            bf_items: bf_items.len(),
            interaction_items: int_items.len(),
            interaction_signals: rows.len(),
            salience: rows,
            candidates: table,
            coefficients,
            fit,
            p_threshold: sw.threshold,
            warnings,
        },
        candidates: accepted,
    })
}
