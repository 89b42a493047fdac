//! Stepwise linear regression on z-scored predictors.
//!
//! Terms enter and leave by adjusted R^2. The surviving set is then pruned
//! by coefficient t-tests, dropping the least significant term and refitting
//! until every coefficient passes.

use csm_core::stats;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepwiseConfig {
    /// Significance level for coefficient t-tests.
    pub alpha: f64,
    /// Divide `alpha` by the number of candidates (Bonferroni).
    pub bonferroni: bool,
}

impl Default for StepwiseConfig {
    fn default() -> Self {
        StepwiseConfig {
            alpha: 0.05,
            bonferroni: true,
        }
    }
}

/// Ordinary least squares with intercept and coefficient tests.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub rss: f64,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub fitted: Vec<f64>,
}

pub fn ols(columns: &[&[f64]], y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    let k = columns.len();
    if n < k + 2 {
        return Err(Error::DegenerateDatabase(format!("{n} observations for {k} predictors")));
    }
    let ym = stats::mean(y);
    let tss: f64 = y.iter().map(|v| (v - ym) * (v - ym)).sum();
    if tss <= 0.0 {
        return Err(Error::DegenerateDatabase("target has zero variance".into()));
    }
    let ls = csm_core::linalg::least_squares(columns, y, true)?;
    let df = (n - k - 1) as f64;
    let r2 = 1.0 - ls.rss / tss;
    let adjusted_r2 = 1.0 - (1.0 - r2) * (n - 1) as f64 / df;

    let x = DMatrix::from_fn(n, k + 1, |r, c| if c == 0 { 1.0 } else { columns[c - 1][r] });
    let xtx = x.transpose() * &x;
    let inv = xtx
        .try_inverse()
        .ok_or(Error::Core(csm_core::CoreError::Singular))?;
    let sigma2 = ls.rss / df;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::DegenerateDatabase(e.to_string()))?;
    let mut t = Vec::with_capacity(k);
    let mut p = Vec::with_capacity(k);
    for j in 0..k {
        let se = (sigma2 * inv[(j + 1, j + 1)]).max(0.0).sqrt();
        let b = ls.coef[j + 1];
        let tj = if se > 0.0 {
            b / se
        } else if b != 0.0 {
            f64::INFINITY.copysign(b)
        } else {
            0.0
        };
        let pj = if tj.is_infinite() {
            0.0
        } else {
            (2.0 * dist.sf(tj.abs())).min(1.0)
        };
        t.push(tj);
        p.push(pj);
    }
    Ok(OlsFit {
        intercept: ls.coef[0],
        coef: ls.coef[1..].to_vec(),
        t,
        p,
        rss: ls.rss,
        r2,
        adjusted_r2,
        fitted: ls.fitted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseResult {
    /// Selected candidate indices in ascending order.
    pub selected: Vec<usize>,
    /// Intercept and coefficients on the z-scored predictors.
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Normalisers for every candidate (zero std marks an unusable one).
    pub z_mean: Vec<f64>,
    pub z_std: Vec<f64>,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub r: f64,
    pub rmse: f64,
    pub threshold: f64,
    pub warning: Option<String>,
}

impl StepwiseResult {
    /// Coefficient of candidate `c` on its raw (un-normalised) scale.
    pub fn raw_coefficient(&self, c: usize) -> Option<f64> {
        let k = self.selected.iter().position(|&s| s == c)?;
        Some(self.coef[k] / self.z_std[c])
    }
}

fn fit_subset(z: &[Vec<f64>], set: &[usize], y: &[f64]) -> Option<OlsFit> {
    let cols: Vec<&[f64]> = set.iter().map(|&i| z[i].as_slice()).collect();
    ols(&cols, y).ok()
}

/// Runs stepwise selection over `candidates` (each a column of length n).
/// Candidates are visited in index order; ties in the entry step go to the
/// larger |t|.
pub fn stepwise(candidates: &[Vec<f64>], y: &[f64], cfg: &StepwiseConfig) -> Result<StepwiseResult> {
    let n = y.len();
    if candidates.iter().any(|c| c.len() != n) {
        return Err(Error::ShapeMismatch("candidate length differs from target".into()));
    }
    let ym = stats::mean(y);
    let tss: f64 = y.iter().map(|v| (v - ym) * (v - ym)).sum();
    if n < 3 || tss <= 0.0 {
        return Err(Error::DegenerateDatabase("target needs variance and three observations".into()));
    }
    let z_mean: Vec<f64> = candidates.iter().map(|c| stats::mean(c)).collect();
    let z_std: Vec<f64> = candidates.iter().map(|c| stats::sample_std(c)).collect();
    let usable: Vec<bool> = z_std.iter().map(|&s| s > 1e-12 * (1.0 + s.abs()) && s.is_finite()).collect();
    let z: Vec<Vec<f64>> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if usable[i] {
                c.iter().map(|v| (v - z_mean[i]) / z_std[i]).collect()
            } else {
                vec![0.0; n]
            }
        })
        .collect();

    let mut set: Vec<usize> = Vec::new();
    let mut current = 0.0;
    for _ in 0..4 * candidates.len() + 4 {
        let mut changed = false;
        // forward
        let mut best: Option<(f64, f64, usize)> = None;
        for c in 0..candidates.len() {
            if !usable[c] || set.contains(&c) || set.len() + 3 > n {
                continue;
            }
            let mut trial = set.clone();
            trial.push(c);
            if let Some(f) = fit_subset(&z, &trial, y) {
                let t = f.t.last().copied().unwrap_or(0.0).abs();
                let better = match best {
                    None => true,
                    Some((a, bt, _)) => f.adjusted_r2 > a || (f.adjusted_r2 == a && t > bt),
                };
                if better {
                    best = Some((f.adjusted_r2, t, c));
                }
            }
        }
        if let Some((a, _, c)) = best {
            if a > current + 1e-12 {
                set.push(c);
                current = a;
                changed = true;
            }
        }
        // backward
        let mut best_rm: Option<(f64, usize)> = None;
        for (pos, _) in set.iter().enumerate() {
            let mut trial = set.clone();
            trial.remove(pos);
            let a = if trial.is_empty() {
                0.0
            } else {
                match fit_subset(&z, &trial, y) {
                    Some(f) => f.adjusted_r2,
                    None => continue,
                }
            };
            if best_rm.is_none_or(|(b, _)| a > b) {
                best_rm = Some((a, pos));
            }
        }
        if let Some((a, pos)) = best_rm {
            if a > current + 1e-12 {
                set.remove(pos);
                current = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let m = usable.iter().filter(|&&u| u).count().max(1);
    let threshold = if cfg.bonferroni { cfg.alpha / m as f64 } else { cfg.alpha };
    set.sort_unstable();
    let mut fit = None;
    while !set.is_empty() {
        let f = fit_subset(&z, &set, y)
            .ok_or_else(|| Error::DegenerateDatabase("selected predictors are collinear".into()))?;
        let (worst, pmax) = f
            .p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        if pmax >= threshold || pmax.is_nan() {
            set.remove(worst);
        } else {
            fit = Some(f);
            break;
        }
    }

    let (intercept, coef, p_values, fitted, r2, adjusted_r2, warning) = match fit {
        Some(f) => (f.intercept, f.coef, f.p, f.fitted, f.r2, f.adjusted_r2, None),
        None => (
            ym,
            Vec::new(),
            Vec::new(),
            vec![ym; n],
            0.0,
            0.0,
            Some("no predictor passed selection; intercept-only model".to_string()),
        ),
    };
    let r = stats::pearson(&fitted, y).unwrap_or(0.0);
    let rmse = stats::rmse(&fitted, y);
    Ok(StepwiseResult {
        selected: set,
        intercept,
        coef,
        p_values,
        z_mean,
        z_std,
        r2,
        adjusted_r2,
        r,
        rmse,
        threshold,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_reports_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.0 * v).collect();
        let f = ols(&[&x], &y).unwrap();
        assert!((f.coef[0] - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_p_values_match_reference() {
        // reference values from an independent simple-regression routine
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 3.0, 2.0, 5.0, 3.0];
        let f = ols(&[&x], &y).unwrap();
        assert!((f.coef[0] - 0.6).abs() < 1e-12);
        assert!((f.t[0] - 1.441_153_384_245_784_4).abs() < 1e-9, "{}", f.t[0]);
        assert!((f.p[0] - 0.245_193_881_794_947_44).abs() < 1e-9, "{}", f.p[0]);
    }

    #[test]
    fn perfect_single_predictor() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| 50.0 + 10.0 * v).collect();
        let noise: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let r = stepwise(&[noise, x], &y, &StepwiseConfig::default()).unwrap();
        assert_eq!(r.selected, vec![1]);
        assert!((r.adjusted_r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_candidates_are_skipped() {
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).cos()).collect();
        let r = stepwise(&[vec![1.0; 12]], &y, &StepwiseConfig::default()).unwrap();
        assert!(r.selected.is_empty());
        assert!(r.warning.is_some());
    }
}
