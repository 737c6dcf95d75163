//! Small dense helpers shared by the model, the EM updates and the metrics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky-based factorization of a Gaussian, computed once per atom.
///
/// Stores the inverse of the lower Cholesky factor so that the quadratic form
/// `(x - c)^T Γ^{-1} (x - c)` reduces to a triangular matrix-vector product
/// without allocation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GaussianFactor {
    dim: usize,
    mean: Vec<f64>,
    // row-major lower-triangular L^{-1}
    chol_inv: Vec<f64>,
    chol: Vec<f64>,
    log_norm: f64,
}

impl GaussianFactor {
    pub(crate) fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidAtom("gate covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(dim, dim))
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let mut chol_inv = vec![0.0; dim * dim];
        let mut chol_rows = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                chol_inv[i * dim + j] = l_inv[(i, j)];
                chol_rows[i * dim + j] = l[(i, j)];
            }
        }
        Ok(Self {
            dim,
            mean: mean.iter().copied().collect(),
            chol_inv,
            chol: chol_rows,
            log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
        })
    }

    /// Log of the Gaussian density at `x`.
    #[inline]
    pub(crate) fn log_pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let d = self.dim;
        let mut quad = 0.0;
        for i in 0..d {
            let row = &self.chol_inv[i * d..i * d + i + 1];
            let mut z = 0.0;
            for (j, l) in row.iter().enumerate() {
                z += l * (x[j] - self.mean[j]);
            }
            quad += z * z;
        }
        self.log_norm - 0.5 * quad
    }

    /// Maps a standard normal vector to a draw from this Gaussian.
    pub(crate) fn transform_standard(&self, xi: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut v = self.mean[i];
            for j in 0..=i {
                v += self.chol[i * d + j] * xi[j];
            }
            out[i] = v;
        }
    }
}

/// Univariate Gaussian log density with variance `var`.
#[inline]
pub(crate) fn log_normal_pdf(y: f64, mean: f64, var: f64) -> f64 {
    let r = y - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

/// `log(sum(exp(v)))` with the max-shift. Returns `-inf` when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Checks symmetry and the conditioning floor; returns the smallest eigenvalue.
pub(crate) fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let d = m.nrows();
    if d == 0 || m.ncols() != d {
        return Err(Error::InvalidAtom(format!(
            "{what} must be a non-empty square matrix"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidAtom(format!("{what} has non-finite entries")));
    }
    for i in 0..d {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                return Err(Error::InvalidAtom(format!("{what} is not symmetric")));
            }
        }
    }
    let min_eig = if d == 1 {
        m[(0, 0)]
    } else {
        m.clone().symmetric_eigenvalues().min()
    };
    let trace = m.trace();
    if min_eig <= 0.0 || min_eig < 1e-12 * trace / d as f64 {
        return Err(Error::InvalidAtom(format!(
            "{what} is not positive definite or is near-singular (smallest eigenvalue {min_eig:e})"
        )));
    }
    Ok(min_eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0]) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn factor_matches_closed_form_2d() {
        let mean = DVector::from_vec(vec![0.5, -1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let f = GaussianFactor::new(&mean, &cov).unwrap();
        let x = [1.0, 0.0];
        let inv = cov.clone().try_inverse().unwrap();
        let diff = DVector::from_vec(vec![0.5, 1.0]);
        let quad = (diff.transpose() * &inv * &diff)[(0, 0)];
        let expected = -0.5 * (2.0 * LN_2PI + cov.determinant().ln() + quad);
        assert!((f.log_pdf(&x) - expected).abs() < 1e-12);
    }

    #[test]
    fn spd_check_rejects_bad_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(check_spd(&asym, "m").is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(check_spd(&singular, "m").is_err());
        let tiny = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        assert!(check_spd(&tiny, "m").is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        assert!(check_spd(&ok, "m").is_ok());
    }
}
