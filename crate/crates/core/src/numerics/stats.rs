//! Covariance, log-determinants and principal components.

use nalgebra::{DMatrix, SymmetricEigen};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Sample covariance (divides by n − 1).
pub fn covariance(x: &Matrix) -> Matrix {
    let n = x.rows();
    let d = x.cols();
    let mean = x.column_means();
    let mut cov = Matrix::zeros(d, d);
    for row in x.iter_rows() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                let v = cov.get(i, j) + di * (row[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    cov
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// ln det of a symmetric positive definite matrix via Cholesky.
pub fn log_det_spd(m: &Matrix) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(to_nalgebra(m))
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    let l = chol.l();
    Ok(2.0 * (0..m.rows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Projects the centred rows of `x` onto its top `k` principal axes.
pub fn principal_components(x: &Matrix, k: usize) -> Matrix {
    let d = x.cols();
    let k = k.min(d);
    let eig = SymmetricEigen::new(to_nalgebra(&covariance(x)));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mean = x.column_means();
    let mut out = Matrix::zeros(x.rows(), k);
    for (r, row) in x.iter_rows().enumerate() {
        for (c, &axis) in order.iter().take(k).enumerate() {
            let v: f64 = (0..d).map(|j| (row[j] - mean[j]) * eig.eigenvectors[(j, axis)]).sum();
            out.set(r, c, v);
        }
    }
    out
}
