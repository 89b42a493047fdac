//! Objective/subjective agreement: correlation, error, monotone cubic
//! mapping, bootstrap confidence interval and outliers.

use csm_core::{score, stats, CsmModel, MarsConfig, MarsModel, CEM_COUNT, DM_COUNT};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::ItemFeatures;
use crate::error::{Error, Result};

/// Grid size for the monotonicity constraint.
pub const MONOTONE_GRID: usize = 1000;
pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const DEFAULT_BOOTSTRAP_SEED: u64 = 20_240_601;

/// Sample Pearson correlation; errors on short or constant input.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::DegenerateDatabase("correlation needs three values".into()));
    }
    stats::pearson(x, y).ok_or_else(|| Error::DegenerateDatabase("constant input to correlation".into()))
}

/// Cubic `a0 + a1 x + a2 x^2 + a3 x^3`, non-decreasing on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCubic {
    pub coef: [f64; 4],
    pub x_min: f64,
    pub x_max: f64,
    /// RMSE of the mapped values against the targets.
    pub rmse: f64,
}

impl MonotoneCubic {
    pub fn eval(&self, x: f64) -> f64 {
        let [a0, a1, a2, a3] = self.coef;
        a0 + x * (a1 + x * (a2 + x * a3))
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let [_, a1, a2, a3] = self.coef;
        a1 + x * (2.0 * a2 + x * 3.0 * a3)
    }
}

/// Least-squares cubic with derivative >= 0 on a dense grid of the data
/// range, solved by a primal active-set method on the grid constraints.
pub fn fit_third_order_monotone(x: &[f64], y: &[f64]) -> Result<MonotoneCubic> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(Error::DegenerateDatabase("monotone mapping needs four points".into()));
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s = hi - lo;
    let mut distinct = stats::sorted(x);
    distinct.dedup();
    if !(s > 0.0) || distinct.len() < 4 {
        return Err(Error::DegenerateDatabase("mapping needs four distinct objective values".into()));
    }
    // work on u = (x - lo) / s in [0, 1]
    let n = x.len();
    let u = DMatrix::from_fn(n, 4, |r, c| ((x[r] - lo) / s).powi(c as i32));
    let yv = DVector::from_column_slice(y);
    let h = u.transpose() * &u;
    let g = u.transpose() * &yv;
    let row = |t: f64| [0.0, 1.0, 2.0 * t, 3.0 * t * t];
    let mut grid: Vec<[f64; 4]> = (0..MONOTONE_GRID)
        .map(|i| row(i as f64 / (MONOTONE_GRID - 1) as f64))
        .collect();
    let dot = |a: &[f64; 4], b: &DVector<f64>| a.iter().zip(b.iter()).map(|(p, q)| p * q).sum::<f64>();

    let unconstrained = h
        .clone()
        .cholesky()
        .map(|c| c.solve(&g))
        .ok_or_else(|| Error::DegenerateDatabase("singular mapping design".into()))?;
    let mut b = unconstrained.clone();
    // The derivative is quadratic in u, so its minimum over [0, 1] is known
    // in closed form. Grid constraints can leave a dip between grid points;
    // the minimiser is then added as one more constraint and the fit redone.
    for _ in 0..50 {
        let (t, d) = min_derivative(&b);
        if d >= -1e-12 {
            break;
        }
        if !grid.iter().any(|a| a[2] == 2.0 * t) {
            grid.push(row(t));
        }
        b = if grid.iter().all(|a| dot(a, &unconstrained) >= -1e-12) {
            unconstrained.clone()
        } else {
            active_set(&h, &g, &grid, stats::mean(y))
        };
    }

    // expand sum_k b_k ((x - lo) / s)^k into powers of x
    let binom = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
    let mut coef = [0.0; 4];
    for k in 0..4 {
        let bk = b[k] / s.powi(k as i32);
        for (j, c) in coef.iter_mut().enumerate().take(k + 1) {
            *c += bk * binom[k][j] * (-lo).powi((k - j) as i32);
        }
    }
    let mut m = MonotoneCubic {
        coef,
        x_min: lo,
        x_max: hi,
        rmse: 0.0,
    };
    let mapped: Vec<f64> = x.iter().map(|&v| m.eval(v)).collect();
    m.rmse = stats::rmse(&mapped, y);
    Ok(m)
}

/// Position and value of the smallest derivative `b1 + 2 b2 u + 3 b3 u^2`
/// over `u` in `[0, 1]`.
fn min_derivative(b: &DVector<f64>) -> (f64, f64) {
    let d = |u: f64| b[1] + 2.0 * b[2] * u + 3.0 * b[3] * u * u;
    let mut cands = vec![0.0, 1.0];
    if b[3] > 0.0 {
        let v = -b[2] / (3.0 * b[3]);
        if v > 0.0 && v < 1.0 {
            cands.push(v);
        }
    }
    cands
        .into_iter()
        .map(|u| (u, d(u)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty")
}

/// Minimises `b'Hb/2 - g'b` subject to `a_i'b >= 0` for every grid row,
/// starting from the feasible constant fit.
fn active_set(h: &DMatrix<f64>, g: &DVector<f64>, grid: &[[f64; 4]], y_mean: f64) -> DVector<f64> {
    let mut b = DVector::from_column_slice(&[y_mean, 0.0, 0.0, 0.0]);
    let mut work: Vec<usize> = Vec::new();
    let row = |i: usize| DVector::from_column_slice(&grid[i]);
    for _ in 0..1000 {
        let w = work.len();
        let mut kkt = DMatrix::<f64>::zeros(4 + w, 4 + w);
        kkt.view_mut((0, 0), (4, 4)).copy_from(h);
        for (j, &i) in work.iter().enumerate() {
            for c in 0..4 {
                kkt[(c, 4 + j)] = -grid[i][c];
                kkt[(4 + j, c)] = grid[i][c];
            }
        }
        let grad = h * &b - g;
        let mut rhs = DVector::<f64>::zeros(4 + w);
        for c in 0..4 {
            rhs[c] = -grad[c];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            break;
        };
        let p = sol.rows(0, 4).into_owned();
        let scale = 1.0 + b.norm();
        if p.norm() <= 1e-12 * scale {
            // multipliers decide whether to release a constraint
            let lambda = sol.rows(4, w).into_owned();
            match lambda.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
                Some((j, &l)) if l < -1e-12 => {
                    work.remove(j);
                }
                _ => return b,
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..grid.len() {
            if work.contains(&i) {
                continue;
            }
            let a = row(i);
            let ap = a.dot(&p);
            if ap < -1e-15 {
                let step = (-a.dot(&b) / ap).max(0.0);
                if step < alpha {
                    alpha = step;
                    blocking = Some(i);
                }
            }
        }
        b += p * alpha;
        if let Some(i) = blocking {
            work.push(i);
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResidual {
    pub signal_id: String,
    pub treatment_id: String,
    pub objective: f64,
    pub subjective: f64,
    pub mapped: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_items: usize,
    pub r: f64,
    pub rmse: f64,
    /// Percentile bootstrap 95% interval for `r`.
    pub r_ci: [f64; 2],
    pub bootstrap_seed: u64,
    pub bootstrap_resamples: usize,
    pub mapping: MonotoneCubic,
    pub mapped_r: f64,
    pub mapped_rmse: f64,
    /// Items with |subjective - mapped| above twice the mapped RMSE.
    pub outliers: usize,
    pub items: Vec<ItemResidual>,
}

/// Percentile bootstrap interval of the Pearson correlation.
pub fn bootstrap_ci(x: &[f64], y: &[f64], resamples: usize, seed: u64) -> [f64; 2] {
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rs = Vec::with_capacity(resamples);
    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    for _ in 0..resamples {
        for k in 0..n {
            let i = rng.random_range(0..n);
            bx[k] = x[i];
            by[k] = y[i];
        }
        if let Some(r) = stats::pearson(&bx, &by) {
            rs.push(r);
        }
    }
    if rs.is_empty() {
        return [f64::NAN, f64::NAN];
    }
    rs.sort_by(f64::total_cmp);
    [stats::quantile_sorted(&rs, 0.025), stats::quantile_sorted(&rs, 0.975)]
}

/// Report for precomputed objective scores.
pub fn evaluate_scores(
    ids: &[(String, String)],
    objective: &[f64],
    subjective: &[f64],
    bootstrap_seed: u64,
) -> Result<EvaluationReport> {
    let n = objective.len();
    if n == 0 {
        return Err(Error::EmptyDatabase);
    }
    if subjective.len() != n || ids.len() != n {
        return Err(Error::ShapeMismatch("evaluation inputs differ in length".into()));
    }
    let r = pearson_r(objective, subjective)?;
    let rmse = stats::rmse(objective, subjective);
    let mapping = fit_third_order_monotone(objective, subjective)?;
    let mapped: Vec<f64> = objective.iter().map(|&v| mapping.eval(v)).collect();
    let mapped_r = stats::pearson(&mapped, subjective).unwrap_or(0.0);
    let mapped_rmse = mapping.rmse;
    let items: Vec<ItemResidual> = (0..n)
        .map(|i| ItemResidual {
            signal_id: ids[i].0.clone(),
            treatment_id: ids[i].1.clone(),
            objective: objective[i],
            subjective: subjective[i],
            mapped: mapped[i],
            residual: subjective[i] - mapped[i],
        })
        .collect();
    // rounding residuals of an exact fit are not outliers
    let limit = (2.0 * mapped_rmse).max(1e-9);
    let outliers = items.iter().filter(|it| it.residual.abs() > limit).count();
    Ok(EvaluationReport {
        n_items: n,
        r,
        rmse,
        r_ci: bootstrap_ci(objective, subjective, BOOTSTRAP_RESAMPLES, bootstrap_seed),
        bootstrap_seed,
        bootstrap_resamples: BOOTSTRAP_RESAMPLES,
        mapping,
        mapped_r,
        mapped_rmse,
        outliers,
        items,
    })
}

/// Scores every item with `model` (in parallel, input order kept).
pub fn score_items(model: &CsmModel, items: &[ItemFeatures]) -> Result<Vec<f64>> {
    items
        .par_iter()
        .map(|it| Ok(score(&it.features, model)?.score))
        .collect()
}

pub fn evaluate(model: &CsmModel, items: &[ItemFeatures], bootstrap_seed: u64) -> Result<EvaluationReport> {
    if items.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let objective = score_items(model, items)?;
    let subjective: Vec<f64> = items.iter().map(|it| it.score).collect();
    let ids: Vec<(String, String)> = items
        .iter()
        .map(|it| (it.signal_id.clone(), it.treatment_id.clone()))
        .collect();
    evaluate_scores(&ids, &objective, &subjective, bootstrap_seed)
}

/// Item-mean DMs followed by item-mean CEMs.
pub fn item_mean_row(it: &ItemFeatures) -> Vec<f64> {
    let mut row = Vec::with_capacity(DM_COUNT + CEM_COUNT);
    row.extend_from_slice(&it.features.item_mean_dm);
    row.extend_from_slice(&it.features.item_mean_cem);
    row
}

/// Baseline mapping stage: additive MARS on the eight item-mean features.
pub fn fit_mars_baseline(train: &[ItemFeatures]) -> Result<MarsModel> {
    let rows: Vec<Vec<f64>> = train.iter().map(item_mean_row).collect();
    let y: Vec<f64> = train.iter().map(|it| it.score).collect();
    let cfg = MarsConfig {
        max_terms: 16,
        ..MarsConfig::default()
    };
    Ok(MarsModel::fit(&rows, &y, &cfg)?)
}
