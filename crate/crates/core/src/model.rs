//! Model data: basis functions, detection probability weights, quality terms.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const DM_COUNT: usize = 5;
pub const CEM_COUNT: usize = 3;

/// Semantic version of the model file layout.
pub const MODEL_FORMAT_VERSION: &str = "1.0.0";

/// Distortion metrics, in the column order used by [`crate::FeatureSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dm {
    RmsModDiff,
    NoiseLoudness,
    LinDist,
    SegNmr,
    Ehs,
}

impl Dm {
    pub const ALL: [Dm; DM_COUNT] = [
        Dm::RmsModDiff,
        Dm::NoiseLoudness,
        Dm::LinDist,
        Dm::SegNmr,
        Dm::Ehs,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dm::RmsModDiff => "RmsModDiff",
            Dm::NoiseLoudness => "NoiseLoudness",
            Dm::LinDist => "LinDist",
            Dm::SegNmr => "SegNMR",
            Dm::Ehs => "EHS",
        }
    }
}

/// Cognitive effect metrics, in the column order used by [`crate::FeatureSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cem {
    ProbSpeech,
    Epn,
    Pdev,
}

impl Cem {
    pub const ALL: [Cem; CEM_COUNT] = [Cem::ProbSpeech, Cem::Epn, Cem::Pdev];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Cem::ProbSpeech => "probSpeech",
            Cem::Epn => "EPN",
            Cem::Pdev => "PDEV",
        }
    }
}

/// One `slope * max(0, x - knot)` segment of a basis function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hinge {
    pub knot: f64,
    pub slope: f64,
}

/// Piecewise-linear map from one DM to the quality scale.
///
/// Inputs outside `[x_min, x_max]` (the training range) are clamped, so the
/// function is constant beyond the data it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisFunction {
    pub dm: Dm,
    pub intercept: f64,
    pub hinges: Vec<Hinge>,
    pub x_min: f64,
    pub x_max: f64,
}

impl BasisFunction {
    pub fn constant(dm: Dm, value: f64, x_min: f64, x_max: f64) -> Self {
        Self {
            dm,
            intercept: value,
            hinges: Vec::new(),
            x_min,
            x_max,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = if x.is_nan() {
            self.x_min
        } else {
            x.clamp(self.x_min, self.x_max)
        };
        self.hinges
            .iter()
            .fold(self.intercept, |acc, h| acc + h.slope * (x - h.knot).max(0.0))
    }

    /// Breakpoints inside the training range, including both ends.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = Vec::with_capacity(self.hinges.len() + 2);
        pts.push(self.x_min);
        pts.extend(
            self.hinges
                .iter()
                .map(|h| h.knot)
                .filter(|&k| k > self.x_min && k < self.x_max),
        );
        pts.push(self.x_max);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// True when no segment inside the training range has a positive slope.
    /// Rises at rounding level (cancelling hinge slopes) are ignored.
    pub fn is_non_increasing(&self) -> bool {
        let pts = self.breakpoints();
        pts.windows(2).all(|w| {
            let (a, b) = (self.eval(w[0]), self.eval(w[1]));
            b <= a + 1e-9 * (1.0 + libm::fabs(a))
        })
    }

    fn validate(&self) -> Result<()> {
        let finite = self.intercept.is_finite()
            && self.x_min.is_finite()
            && self.x_max.is_finite()
            && self.hinges.iter().all(|h| h.knot.is_finite() && h.slope.is_finite());
        if !finite {
            return Err(CoreError::InvalidModel(format!(
                "basis function for {} has non-finite parameters",
                self.dm.name()
            )));
        }
        if self.x_min > self.x_max {
            return Err(CoreError::InvalidModel(format!(
                "basis function for {} has x_min > x_max",
                self.dm.name()
            )));
        }
        Ok(())
    }
}

/// Shape of a single DPW factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DpwShape {
    /// `1 / (1 + exp(-steepness * (c - midpoint)))`.
    Logistic { steepness: f64, midpoint: f64 },
    /// `clamp((c - lo) / (hi - lo), 0, 1)`: the shallow-slope limit of the
    /// logistic family over the calibration range.
    Ramp { lo: f64, hi: f64 },
}

impl DpwShape {
    pub fn eval(&self, c: f64) -> f64 {
        match *self {
            DpwShape::Logistic {
                steepness,
                midpoint,
            } => {
                let z = steepness * (c - midpoint);
                if steepness == 0.0 {
                    0.5
                } else if z >= 0.0 {
                    1.0 / (1.0 + libm::exp(-z))
                } else {
                    let e = libm::exp(z);
                    e / (1.0 + e)
                }
            }
            DpwShape::Ramp { lo, hi } => {
                if hi > lo {
                    ((c - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            }
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            DpwShape::Logistic {
                steepness,
                midpoint,
            } => steepness.is_finite() && midpoint.is_finite(),
            DpwShape::Ramp { lo, hi } => lo.is_finite() && hi.is_finite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpwFactor {
    pub cem: Cem,
    pub shape: DpwShape,
}

/// Detection probability weight: product of one or two psychometric factors,
/// optionally inverted (`1 - w`) when a larger effect lowers salience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dpw {
    pub id: String,
    pub factors: Vec<DpwFactor>,
    pub inverted: bool,
}

impl Dpw {
    pub fn logistic(id: &str, cem: Cem, steepness: f64, midpoint: f64, inverted: bool) -> Self {
        Self {
            id: id.into(),
            factors: alloc::vec![DpwFactor {
                cem,
                shape: DpwShape::Logistic {
                    steepness,
                    midpoint
                },
            }],
            inverted,
        }
    }

    /// Weight for one frame of CEM values, in `[0, 1]`.
    pub fn eval(&self, cem: &[f64; CEM_COUNT]) -> f64 {
        let w: f64 = self
            .factors
            .iter()
            .map(|f| f.shape.eval(cem[f.cem.index()]))
            .product();
        if self.inverted {
            1.0 - w
        } else {
            w
        }
    }

    fn validate(&self) -> Result<()> {
        if self.factors.is_empty() || self.factors.len() > 2 {
            return Err(CoreError::InvalidModel(format!(
                "DPW {} must have one or two factors",
                self.id
            )));
        }
        if !self.factors.iter().all(|f| f.shape.is_finite()) {
            return Err(CoreError::InvalidModel(format!(
                "DPW {} has non-finite parameters",
                self.id
            )));
        }
        Ok(())
    }
}

/// One additive term of the quality sum.
///
/// The intercept term has neither `bf` nor `dpw`; its `coefficient` is the
/// constant per-frame contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityTerm {
    pub id: String,
    pub bf: Option<Dm>,
    pub dpw: Option<String>,
    pub coefficient: f64,
    pub z_mean: f64,
    pub z_std: f64,
}

impl QualityTerm {
    pub fn intercept(value: f64) -> Self {
        Self {
            id: "Q0".into(),
            bf: None,
            dpw: None,
            coefficient: value,
            z_mean: 0.0,
            z_std: 1.0,
        }
    }

    pub fn is_intercept(&self) -> bool {
        self.bf.is_none() && self.dpw.is_none()
    }

    /// Human-readable expression such as `DPW3*LinDist_Q`.
    pub fn expression(&self) -> String {
        match (&self.dpw, self.bf) {
            (None, None) => "Intercept".into(),
            (None, Some(dm)) => format!("{}_Q", dm.name()),
            (Some(d), Some(dm)) => format!("{}*{}_Q", d, dm.name()),
            (Some(d), None) => format!("{}*?", d),
        }
    }
}

/// Summary of the regression that produced the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub r: f64,
    pub rmse: f64,
    pub adjusted_r2: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub description: String,
    pub fit: Option<FitSummary>,
    /// Effective configuration the model was produced with.
    pub settings: BTreeMap<String, String>,
}

/// Complete calibrated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsmModel {
    pub format_version: String,
    pub config_hash: String,
    pub basis_functions: Vec<BasisFunction>,
    pub dpws: Vec<Dpw>,
    pub terms: Vec<QualityTerm>,
    pub provenance: Provenance,
}

/// Itemized parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParameterCount {
    pub basis_functions: usize,
    pub dpws: usize,
    pub coefficients: usize,
    pub normalizers: usize,
    pub total: usize,
}

impl CsmModel {
    pub fn bf(&self, dm: Dm) -> Option<&BasisFunction> {
        self.basis_functions.iter().find(|b| b.dm == dm)
    }

    pub fn dpw(&self, id: &str) -> Option<&Dpw> {
        self.dpws.iter().find(|d| d.id == id)
    }

    pub fn intercept(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.is_intercept())
            .map(|t| t.coefficient)
            .sum()
    }

    /// Structural checks run after every load.
    pub fn validate(&self) -> Result<()> {
        if self.format_version.split('.').next() != MODEL_FORMAT_VERSION.split('.').next() {
            return Err(CoreError::InvalidModel(format!(
                "unsupported format version {} (expected {})",
                self.format_version, MODEL_FORMAT_VERSION
            )));
        }
        for (i, bf) in self.basis_functions.iter().enumerate() {
            bf.validate()?;
            if self.basis_functions[..i].iter().any(|o| o.dm == bf.dm) {
                return Err(CoreError::InvalidModel(format!(
                    "duplicate basis function for {}",
                    bf.dm.name()
                )));
            }
        }
        for (i, d) in self.dpws.iter().enumerate() {
            d.validate()?;
            if self.dpws[..i].iter().any(|o| o.id == d.id) {
                return Err(CoreError::InvalidModel(format!("duplicate DPW id {}", d.id)));
            }
        }
        if self.terms.is_empty() {
            return Err(CoreError::InvalidModel("model has no terms".into()));
        }
        let intercepts = self.terms.iter().filter(|t| t.is_intercept()).count();
        if intercepts != 1 {
            return Err(CoreError::InvalidModel(format!(
                "expected exactly one intercept term, found {intercepts}"
            )));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if self.terms[..i].iter().any(|o| o.id == t.id) {
                return Err(CoreError::InvalidModel(format!("duplicate term id {}", t.id)));
            }
            if !(t.coefficient.is_finite() && t.z_mean.is_finite() && t.z_std.is_finite()) {
                return Err(CoreError::InvalidModel(format!(
                    "term {} has non-finite parameters",
                    t.id
                )));
            }
            if t.is_intercept() {
                continue;
            }
            let Some(dm) = t.bf else {
                return Err(CoreError::InvalidModel(format!(
                    "term {} has a DPW but no basis function",
                    t.id
                )));
            };
            if self.bf(dm).is_none() {
                return Err(CoreError::InvalidModel(format!(
                    "term {} references missing basis function {}",
                    t.id,
                    dm.name()
                )));
            }
            if let Some(d) = &t.dpw {
                if self.dpw(d).is_none() {
                    return Err(CoreError::InvalidModel(format!(
                        "term {} references missing DPW {}",
                        t.id, d
                    )));
                }
            }
            if !(t.z_std > 0.0) {
                return Err(CoreError::InvalidModel(format!(
                    "term {} has non-positive z_std",
                    t.id
                )));
            }
        }
        Ok(())
    }

    /// Count of free parameters stored in the model.
    ///
    /// A basis function contributes its intercept plus knot and slope per
    /// hinge; a logistic factor two parameters; each term one coefficient;
    /// each non-intercept term a mean and a standard deviation.
    pub fn count_parameters(&self) -> ParameterCount {
        let mut count = ParameterCount::default();
        for t in &self.terms {
            count.coefficients += 1;
            if !t.is_intercept() {
                count.normalizers += 2;
            }
        }
        count.basis_functions = self.basis_functions.iter().map(|b| 1 + 2 * b.hinges.len()).sum();
        count.dpws = self.dpws.iter().map(|d| 2 * d.factors.len()).sum();
        count.total = count.basis_functions + count.dpws + count.coefficients + count.normalizers;
        count
    }
}
