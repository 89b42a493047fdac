//! Additive multivariate adaptive regression splines.
//!
//! The forward pass greedily adds mirrored hinge pairs `max(0, x - t)`,
//! `max(0, t - x)`; the backward pass removes terms one at a time and keeps
//! the subset with the lowest generalized cross-validation score. Only
//! first-order (additive) terms are built.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::least_squares;
use crate::model::{BasisFunction, Dm, Hinge};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarsConfig {
    /// Maximum number of hinge terms, intercept excluded.
    pub max_terms: usize,
    /// GCV cost per knot.
    pub penalty: f64,
    /// Upper bound on candidate knots per variable (quantile-thinned).
    pub max_knots: usize,
    /// Observations kept clear of knots at each end of a variable's range.
    /// `None` uses Friedman's rule at `alpha = 0.05`.
    pub end_span: Option<usize>,
    /// Observations between neighbouring candidate knots. `None` uses
    /// Friedman's rule at `alpha = 0.05`.
    pub min_span: Option<usize>,
}

impl Default for MarsConfig {
    fn default() -> Self {
        Self {
            max_terms: 16,
            penalty: 2.0,
            max_knots: 64,
            end_span: None,
            min_span: None,
        }
    }
}

const SPAN_ALPHA: f64 = 0.05;

/// Friedman's end span `3 - log2(alpha / p)` for `p` predictors.
pub fn default_end_span(n_vars: usize) -> usize {
    libm::ceil(3.0 - libm::log2(SPAN_ALPHA / n_vars.max(1) as f64)) as usize
}

/// Friedman's minimum span `-log2(-ln(1 - alpha) / (p n)) / 2.5`.
pub fn default_min_span(n_vars: usize, n: usize) -> usize {
    let q = -libm::log(1.0 - SPAN_ALPHA) / (n_vars.max(1) * n.max(1)) as f64;
    (libm::round(-libm::log2(q) / 2.5) as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HingeDir {
    /// `max(0, x - knot)`
    Up,
    /// `max(0, knot - x)`
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarsTerm {
    pub var: usize,
    pub knot: f64,
    pub dir: HingeDir,
    pub coef: f64,
}

impl MarsTerm {
    fn basis(var: usize, knot: f64, dir: HingeDir, row: &[f64]) -> f64 {
        match dir {
            HingeDir::Up => (row[var] - knot).max(0.0),
            HingeDir::Down => (knot - row[var]).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarsModel {
    pub n_vars: usize,
    pub intercept: f64,
    pub terms: Vec<MarsTerm>,
    pub gcv: f64,
}

type Spec = (usize, f64, HingeDir);

fn column(spec: Spec, rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter()
        .map(|r| MarsTerm::basis(spec.0, spec.1, spec.2, r))
        .collect()
}

fn gcv(rss: f64, n: usize, terms: usize, penalty: f64) -> f64 {
    let eff = (terms + 1) as f64 + penalty * terms as f64 / 2.0;
    let nf = n as f64;
    if eff >= nf {
        return f64::INFINITY;
    }
    let d = 1.0 - eff / nf;
    (rss / nf) / (d * d)
}

fn rss_of(cols: &[Vec<f64>], y: &[f64]) -> Option<f64> {
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    least_squares(&refs, y, true).ok().map(|f| f.rss)
}

fn candidate_knots(rows: &[Vec<f64>], var: usize, max_knots: usize, end_span: usize, min_span: usize) -> Vec<f64> {
    let mut all: Vec<f64> = rows.iter().map(|r| r[var]).collect();
    all.sort_by(f64::total_cmp);
    let n = all.len();
    let x_max = all[n - 1];
    // small samples keep at least the interior order statistics
    let end = end_span.min(n.saturating_sub(1) / 2);
    let mut xs: Vec<f64> = (end..n - end)
        .step_by(min_span.max(1))
        .map(|i| all[i])
        .collect();
    xs.dedup();
    // the largest value would give an all-zero up-hinge
    xs.retain(|&v| v < x_max);
    if xs.len() > max_knots && max_knots > 1 {
        let step = (xs.len() - 1) as f64 / (max_knots - 1) as f64;
        let mut thinned: Vec<f64> = (0..max_knots)
            .map(|i| xs[libm::round(i as f64 * step) as usize])
            .collect();
        thinned.dedup();
        xs = thinned;
    }
    xs
}

fn is_zero(col: &[f64]) -> bool {
    col.iter().all(|&v| v == 0.0)
}

impl MarsModel {
    /// Fit on `rows` (one feature vector per sample) and targets `y`.
    pub fn fit(rows: &[Vec<f64>], y: &[f64], cfg: &MarsConfig) -> Result<Self> {
        let n = y.len();
        if rows.len() != n {
            return Err(CoreError::LengthMismatch(rows.len(), n));
        }
        if n < 3 {
            return Err(CoreError::TooFewSamples { needed: 3, got: n });
        }
        if rows.iter().flatten().chain(y).any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite);
        }
        let n_vars = rows[0].len();
        let end_span = cfg.end_span.unwrap_or_else(|| default_end_span(n_vars));
        let min_span = cfg.min_span.unwrap_or_else(|| default_min_span(n_vars, n));
        let knots: Vec<Vec<f64>> = (0..n_vars)
            .map(|v| candidate_knots(rows, v, cfg.max_knots, end_span, min_span))
            .collect();

        // forward pass
        let mut specs: Vec<Spec> = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut current_rss = rss_of(&[], y).unwrap_or(f64::INFINITY);
        while specs.len() < cfg.max_terms {
            let room = cfg.max_terms - specs.len();
            let mut best: Option<(f64, Vec<Spec>, Vec<Vec<f64>>)> = None;
            for (var, ks) in knots.iter().enumerate() {
                for &t in ks {
                    let up = (var, t, HingeDir::Up);
                    let down = (var, t, HingeDir::Down);
                    let cu = column(up, rows);
                    let cd = column(down, rows);
                    let mut options: Vec<(Vec<Spec>, Vec<Vec<f64>>)> = Vec::new();
                    let fresh = |s: &Spec| !specs.contains(s);
                    let up_ok = fresh(&up) && !is_zero(&cu);
                    let down_ok = fresh(&down) && !is_zero(&cd);
                    if room >= 2 && up_ok && down_ok {
                        options.push((alloc::vec![up, down], alloc::vec![cu.clone(), cd.clone()]));
                    } else {
                        if up_ok {
                            options.push((alloc::vec![up], alloc::vec![cu.clone()]));
                        }
                        if down_ok {
                            options.push((alloc::vec![down], alloc::vec![cd.clone()]));
                        }
                    }
                    for (s, c) in options {
                        let mut trial = cols.clone();
                        trial.extend(c.iter().cloned());
                        if let Some(rss) = rss_of(&trial, y) {
                            if best.as_ref().is_none_or(|b| rss < b.0) {
                                best = Some((rss, s, c));
                            }
                        }
                    }
                }
            }
            match best {
                Some((rss, s, c)) if rss < current_rss * (1.0 - 1e-12) => {
                    current_rss = rss;
                    specs.extend(s);
                    cols.extend(c);
                    if rss <= 1e-20 {
                        break;
                    }
                }
                _ => break,
            }
        }

        // backward pass
        let mut best_subset: Vec<usize> = (0..specs.len()).collect();
        let mut best_gcv = gcv(current_rss, n, specs.len(), cfg.penalty);
        let mut subset = best_subset.clone();
        while !subset.is_empty() {
            let mut pick: Option<(f64, usize)> = None;
            for drop in 0..subset.len() {
                let trial: Vec<Vec<f64>> = subset
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != drop)
                    .map(|(_, &k)| cols[k].clone())
                    .collect();
                if let Some(rss) = rss_of(&trial, y) {
                    if pick.is_none_or(|p| rss < p.0) {
                        pick = Some((rss, drop));
                    }
                }
            }
            let Some((rss, drop)) = pick else { break };
            subset.remove(drop);
            let g = gcv(rss, n, subset.len(), cfg.penalty);
            if g <= best_gcv {
                best_gcv = g;
                best_subset = subset.clone();
            }
        }

        let final_cols: Vec<&[f64]> = best_subset.iter().map(|&k| cols[k].as_slice()).collect();
        let fit = least_squares(&final_cols, y, true)?;
        let terms = best_subset
            .iter()
            .zip(&fit.coef[1..])
            .map(|(&k, &coef)| MarsTerm {
                var: specs[k].0,
                knot: specs[k].1,
                dir: specs[k].2,
                coef,
            })
            .collect();
        Ok(Self {
            n_vars,
            intercept: fit.coef[0],
            terms,
            gcv: best_gcv,
        })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.terms.iter().fold(self.intercept, |acc, t| {
            acc + t.coef * MarsTerm::basis(t.var, t.knot, t.dir, row)
        })
    }

    /// Intercept plus knot and coefficient per term.
    pub fn parameter_count(&self) -> usize {
        1 + 2 * self.terms.len()
    }
}

/// Basis-function fitting budget: three hinge terms.
pub const BF_MAX_TERMS: usize = 3;

/// Fit a monotone non-increasing basis function from `(dm, score)` samples.
///
/// A univariate MARS model with at most [`BF_MAX_TERMS`] hinge terms is fitted
/// and rewritten as intercept plus up-hinges over the training range. Any
/// segment with a positive slope is flattened, and the intercept is re-fitted
/// so the mean residual stays zero.
pub fn fit_basis_function(dm: Dm, samples: &[(f64, f64)]) -> Result<BasisFunction> {
    if samples.len() < 10 {
        return Err(CoreError::TooFewSamples {
            needed: 10,
            got: samples.len(),
        });
    }
    if samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(CoreError::NonFinite);
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_mean = stats::mean(&ys);
    if !(x_max > x_min) {
        return Ok(BasisFunction::constant(dm, y_mean, x_min, x_max));
    }
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| alloc::vec![x]).collect();
    let cfg = MarsConfig {
        max_terms: BF_MAX_TERMS,
        penalty: 2.0,
        max_knots: 128,
        ..MarsConfig::default()
    };
    let mars = MarsModel::fit(&rows, &ys, &cfg)?;

    // breakpoints of the fitted spline inside the range
    let mut pts: Vec<f64> = Vec::new();
    pts.push(x_min);
    pts.extend(
        mars.terms
            .iter()
            .map(|t| t.knot)
            .filter(|&k| k > x_min && k < x_max),
    );
    pts.push(x_max);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let values: Vec<f64> = pts.iter().map(|&p| mars.predict(&[p])).collect();
    let slopes: Vec<f64> = pts
        .windows(2)
        .zip(values.windows(2))
        .map(|(p, v)| ((v[1] - v[0]) / (p[1] - p[0])).min(0.0))
        .collect();

    let mut hinges = Vec::new();
    let mut prev = 0.0;
    for (i, &s) in slopes.iter().enumerate() {
        let ds = s - prev;
        if ds != 0.0 {
            hinges.push(Hinge {
                knot: pts[i],
                slope: ds,
            });
        }
        prev = s;
    }
    let mut bf = BasisFunction {
        dm,
        intercept: 0.0,
        hinges,
        x_min,
        x_max,
    };
    let resid: Vec<f64> = samples.iter().map(|&(x, y)| y - bf.eval(x)).collect();
    bf.intercept = stats::mean(&resid);
    Ok(bf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_line_is_reproduced() {
        let samples: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let x = i as f64 / 39.0 * 2.0;
                (x, 100.0 - 40.0 * x)
            })
            .collect();
        let bf = fit_basis_function(Dm::NoiseLoudness, &samples).unwrap();
        let rmse = libm::sqrt(
            samples
                .iter()
                .map(|&(x, y)| (bf.eval(x) - y) * (bf.eval(x) - y))
                .sum::<f64>()
                / samples.len() as f64,
        );
        assert!(rmse < 1e-9, "rmse {rmse}");
        assert!(bf.hinges.len() <= 3);
    }

    #[test]
    fn constant_scores_give_constant_function() {
        let samples: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 70.0)).collect();
        let bf = fit_basis_function(Dm::Ehs, &samples).unwrap();
        for i in 0..20 {
            assert!((bf.eval(i as f64) - 70.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_variance_dm_gives_mean() {
        let samples: Vec<(f64, f64)> = (0..20).map(|i| (0.3, i as f64)).collect();
        let bf = fit_basis_function(Dm::Ehs, &samples).unwrap();
        assert!(bf.hinges.is_empty());
        assert!((bf.eval(0.3) - 9.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let samples = [(0.0, 1.0); 9];
        assert!(matches!(
            fit_basis_function(Dm::Ehs, &samples),
            Err(CoreError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn noisy_line_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<(f64, f64)> = (0..100)
            .map(|_| {
                let x: f64 = rng.random();
                (x, 100.0 - 40.0 * x + (rng.random::<f64>() - 0.5))
            })
            .collect();
        let bf = fit_basis_function(Dm::LinDist, &samples).unwrap();
        assert!((bf.eval(0.5) - 80.0).abs() < 1.0, "{}", bf.eval(0.5));
    }

    #[test]
    fn knee_is_recovered() {
        // slope -10 below 0.4 and -80 above, noise sigma 2
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = rand_distr_normal;
        let samples: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let x = i as f64 / 199.0;
                let y = if x < 0.4 {
                    90.0 - 10.0 * x
                } else {
                    86.0 - 80.0 * (x - 0.4)
                };
                (x, y + 2.0 * normal(&mut rng))
            })
            .collect();
        let bf = fit_basis_function(Dm::LinDist, &samples).unwrap();
        let interior: Vec<f64> = bf
            .hinges
            .iter()
            .map(|h| h.knot)
            .filter(|&k| k > bf.x_min)
            .collect();
        assert!(
            interior.iter().any(|&k| (0.3..=0.5).contains(&k)),
            "knots {interior:?}"
        );
        assert!(bf.is_non_increasing());
    }

    #[test]
    fn rising_data_is_flattened() {
        let samples: Vec<(f64, f64)> = (0..30).map(|i| (i as f64, i as f64)).collect();
        let bf = fit_basis_function(Dm::SegNmr, &samples).unwrap();
        assert!(bf.is_non_increasing());
        assert!((bf.eval(0.0) - 14.5).abs() < 1e-9);
    }

    #[test]
    fn multivariate_additive_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..150)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 50.0 + 30.0 * (r[0] - 0.5).max(0.0) - 20.0 * r[2])
            .collect();
        let m = MarsModel::fit(&rows, &y, &MarsConfig::default()).unwrap();
        let err: f64 = rows
            .iter()
            .zip(&y)
            .map(|(r, t)| (m.predict(r) - t).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.5, "max abs error {err}");
        assert!(m.terms.iter().all(|t| t.var != 1));
    }

    #[test]
    fn friedman_spans() {
        // 3 + log2(20) = 7.32 and log2(42 / 0.0513) / 2.5 = 3.87
        assert_eq!(default_end_span(1), 8);
        assert_eq!(default_min_span(1, 42), 4);
        assert_eq!(default_end_span(8), 11);
        assert!(default_min_span(1, 3) >= 1);
    }

    #[test]
    fn knots_skip_the_ends() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| alloc::vec![i as f64]).collect();
        let k = candidate_knots(&rows, 0, 128, 8, 4);
        assert_eq!(k.first(), Some(&8.0));
        assert!(k.iter().all(|&x| x < 32.0));
        assert!(k.windows(2).all(|w| w[1] - w[0] == 4.0));
    }

    fn rand_distr_normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }
}
