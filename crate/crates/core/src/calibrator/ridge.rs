use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::scaler::{check_matrix, column_means};
use crate::error::{Error, Result};

/// L2-regularized linear model with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

impl RidgeModel {
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: row.len(),
            });
        }
        Ok(self.intercept + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>())
    }
}

/// Solves `(XcᵀXc + αI) w = Xcᵀyc` on centered data by Cholesky factorization;
/// the intercept is `mean(y) − mean(X)·w`.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<RidgeModel> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ridge needs at least 2 rows, got {}",
            x.len()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("ridge targets"));
    }
    let d = check_matrix(x)?;
    let n = x.len();
    let x_mean = column_means(x, d);
    let y_mean = y
        .iter()
        .enumerate()
        .fold(0.0, |m, (i, v)| m + (v - m) / (i + 1) as f64);

    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.tr_mul(&xc);
    for j in 0..d {
        gram[(j, j)] += alpha;
    }
    let rhs = xc.tr_mul(&yc);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("ridge system is not positive definite".into()))?;
    let w = chol.solve(&rhs);

    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - x_mean.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>();
    Ok(RidgeModel {
        weights,
        intercept,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_alpha_recovers_ols() {
        let m = fit_ridge(&[vec![-1.0], vec![1.0]], &[-1.0, 1.0], 1e-10).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-9);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn huge_alpha_shrinks_to_mean() {
        let x = [vec![-1.0, 2.0], vec![1.0, 0.0], vec![3.0, 1.0]];
        let y = [0.2, 0.9, 0.4];
        let m = fit_ridge(&x, &y, 1e14).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-12));
        for row in &x {
            assert!((m.predict(row).unwrap() - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_targets_give_zero_weights() {
        let x = [vec![1.0], vec![2.0], vec![4.0]];
        let m = fit_ridge(&x, &[0.7; 3], 1.0).unwrap();
        assert_eq!(m.weights, [0.0]);
        assert_eq!(m.intercept, 0.7);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_ridge(&[vec![1.0], vec![2.0]], &[1.0], 1.0).is_err());
        assert!(fit_ridge(&[vec![1.0], vec![2.0]], &[1.0, 2.0], 0.0).is_err());
        assert!(fit_ridge(&[vec![1.0], vec![2.0]], &[1.0, f64::INFINITY], 1.0).is_err());
        assert!(fit_ridge(&[vec![1.0], vec![2.0, 3.0]], &[1.0, 2.0], 1.0).is_err());
    }
}
