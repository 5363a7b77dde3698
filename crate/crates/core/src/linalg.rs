//! Moore-Penrose pseudo-inverse on top of nalgebra's SVD.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::Matrix;

/// Default relative cutoff for small singular values.
pub const DEFAULT_RTOL: f64 = 1e-6;

const SVD_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    SvdNoConvergence { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("relative tolerance must be finite and non-negative, got {0}")]
    BadTolerance(f64),
}

pub fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) as f64)
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.set(r, c, m[(r, c)] as f32);
        }
    }
    out
}

/// `A⁺ = V Σ⁺ Uᵀ`, zeroing singular values below `rtol * σ_max`.
pub fn pinv(a: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>, LinalgError> {
    if !(rtol.is_finite() && rtol >= 0.0) {
        return Err(LinalgError::BadTolerance(rtol));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let svd = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(LinalgError::SvdNoConvergence { rows, cols })?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rtol * sigma_max;
    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let inv = 1.0 / s;
        let vk = v_t.row(k);
        let uk = u.column(k);
        for c in 0..cols {
            let vc = vk[c] * inv;
            if vc == 0.0 {
                continue;
            }
            for r in 0..rows {
                out[(c, r)] += vc * uk[r];
            }
        }
    }
    Ok(out)
}

/// `‖A‖_F`.
pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_invertible() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 7.0, 2.0, 6.0]);
        let p = pinv(&a, DEFAULT_RTOL).unwrap();
        let id = &a * &p;
        assert!((id - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn rank_deficient_satisfies_penrose() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let p = pinv(&a, DEFAULT_RTOL).unwrap();
        assert!((&a * &p * &a - &a).abs().max() < 1e-12);
        assert!((&p * &a * &p - &p).abs().max() < 1e-12);
        let ap = &a * &p;
        assert!((ap.transpose() - ap).abs().max() < 1e-12);
    }

    #[test]
    fn zero_matrix_pinv_is_zero() {
        let p = pinv(&DMatrix::zeros(3, 4), DEFAULT_RTOL).unwrap();
        assert_eq!(p.shape(), (4, 3));
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_nan() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert_eq!(pinv(&a, DEFAULT_RTOL), Err(LinalgError::NonFinite));
    }
}
