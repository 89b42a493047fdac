//! Dense least squares on small design matrices.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Least-squares solution of `X b = y`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coef: Vec<f64>,
    pub fitted: Vec<f64>,
    pub rss: f64,
}

/// Solve by Householder QR. `columns` are the predictors; an intercept column
/// of ones is prepended when `intercept` is set, and its coefficient comes
/// first in the result. Rank-deficient designs return [`CoreError::Singular`].
pub fn least_squares(columns: &[&[f64]], y: &[f64], intercept: bool) -> Result<LeastSquares> {
    let n = y.len();
    let p = columns.len() + usize::from(intercept);
    if p == 0 {
        return Ok(LeastSquares {
            coef: Vec::new(),
            fitted: alloc::vec![0.0; n],
            rss: y.iter().map(|v| v * v).sum(),
        });
    }
    if n < p {
        return Err(CoreError::TooFewSamples { needed: p, got: n });
    }
    for c in columns {
        if c.len() != n {
            return Err(CoreError::LengthMismatch(c.len(), n));
        }
    }
    let x = DMatrix::from_fn(n, p, |i, j| {
        if intercept {
            if j == 0 {
                1.0
            } else {
                columns[j - 1][i]
            }
        } else {
            columns[j][i]
        }
    });
    let yv = DVector::from_column_slice(y);
    let col_scale = (0..p)
        .map(|j| x.column(j).norm())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let qr = x.clone().qr();
    let r = qr.r();
    for k in 0..p {
        if r[(k, k)].abs() <= 1e-10 * col_scale {
            return Err(CoreError::Singular);
        }
    }
    let qty = qr.q().transpose() * &yv;
    let b = r.solve_upper_triangular(&qty).ok_or(CoreError::Singular)?;
    let fitted = &x * &b;
    let rss = (&yv - &fitted).norm_squared();
    Ok(LeastSquares {
        coef: b.iter().copied().collect(),
        fitted: fitted.iter().copied().collect(),
        rss,
    })
}
