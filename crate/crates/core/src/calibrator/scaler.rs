use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column standardization: `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    /// Population standard deviations; zero-variance columns get 1.
    pub scales: Vec<f64>,
}

impl ScalerParams {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }
}

pub(crate) fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    for row in x {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
    }
    Ok(d)
}

pub(crate) fn column_means(x: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut means = vec![0.0; d];
    for (n, row) in x.iter().enumerate() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += (v - *m) / (n + 1) as f64;
        }
    }
    means
}

pub fn fit_scaler(x: &[Vec<f64>]) -> Result<ScalerParams> {
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "scaler needs at least 2 rows, got {}",
            x.len()
        )));
    }
    let d = check_matrix(x)?;
    let means = column_means(x, d);
    let n = x.len() as f64;
    let scales = (0..d)
        .map(|j| {
            let var = x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Ok(ScalerParams { means, scales })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points() {
        let p = fit_scaler(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(p.means, [1.0]);
        assert_eq!(p.scales, [1.0]);
    }

    #[test]
    fn constant_column_falls_back_to_unit_scale() {
        let p = fit_scaler(&[vec![5.0], vec![5.0], vec![5.0]]).unwrap();
        assert_eq!(p.means, [5.0]);
        assert_eq!(p.scales, [1.0]);
    }

    #[test]
    fn standardized_input_is_fixed_point() {
        let raw: Vec<Vec<f64>> = [3.0, -1.0, 4.0, 1.5, 9.0, 2.6]
            .iter()
            .map(|&v| vec![v, v * v])
            .collect();
        let p = fit_scaler(&raw).unwrap();
        let z: Vec<Vec<f64>> = raw.iter().map(|r| p.transform(r).unwrap()).collect();
        let q = fit_scaler(&z).unwrap();
        for j in 0..2 {
            assert!(q.means[j].abs() < 1e-12);
            assert!((q.scales[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        assert!(fit_scaler(&[vec![1.0]]).is_err());
        assert!(fit_scaler(&[vec![1.0], vec![f64::NAN]]).is_err());
        let p = fit_scaler(&[vec![0.0], vec![2.0]]).unwrap();
        assert!(p.transform(&[1.0, 2.0]).is_err());
    }
}
