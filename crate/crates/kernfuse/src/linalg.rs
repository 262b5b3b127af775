//! Symmetric dense helpers. Every solve in the crate goes through an
//! eigendecomposition so that tiny and negative eigenvalues are treated the
//! same way everywhere.

use nalgebra::{DMatrix, DVector};

use crate::rkhs_core::RkhsError;

/// Relative eigenvalue cutoff used by pseudo-inverse solves.
pub const SOLVE_RTOL: f64 = 1e-12;

/// Relative residual allowed before a pseudo-inverse solve is declared inconsistent.
pub const CONSISTENCY_RTOL: f64 = 1e-6;

/// Eigendecomposition of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        if n == 0 {
            return SymEig { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) };
        }
        let sym = (a + a.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (col, &i) in order.iter().enumerate() {
            vectors.set_column(col, &eig.eigenvectors.column(i));
        }
        SymEig { values, vectors }
    }

    /// Largest eigenvalue (0 for an empty matrix).
    pub fn max(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values[0]
        }
    }

    pub fn min(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values[self.values.len() - 1]
        }
    }

    fn cutoff(&self, rtol: f64) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rtol * scale
    }

    /// Number of eigenvalues above `rtol * max|λ|`.
    pub fn rank(&self, rtol: f64) -> usize {
        let cut = self.cutoff(rtol);
        self.values.iter().filter(|&&v| v > cut && v > 0.0).count()
    }

    /// Eigenvectors and eigenvalues of the numerical range.
    pub fn range(&self, rtol: f64) -> (DMatrix<f64>, DVector<f64>) {
        let r = self.rank(rtol);
        (self.vectors.columns(0, r).into_owned(), self.values.rows(0, r).into_owned())
    }

    /// Orthogonal projector onto the numerical range.
    pub fn range_projector(&self, rtol: f64) -> DMatrix<f64> {
        let (v, _) = self.range(rtol);
        &v * v.transpose()
    }

    /// Moore–Penrose inverse with eigenvalues below the cutoff dropped.
    pub fn pinv(&self, rtol: f64) -> DMatrix<f64> {
        let (v, l) = self.range(rtol);
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] / l[j]);
        scaled * v.transpose()
    }

    /// Square root with negative eigenvalues clamped to zero.
    pub fn sqrt(&self) -> DMatrix<f64> {
        let n = self.values.len();
        let s = DMatrix::from_fn(n, n, |i, j| self.vectors[(i, j)] * self.values[j].max(0.0).sqrt());
        s * self.vectors.transpose()
    }
}

/// Solves `a x = b` for symmetric `a` through the pseudo-inverse.
///
/// Fails when `a` is non-finite or numerically zero, or when `b` has a
/// component outside the range of `a`.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, RkhsError> {
    if !a.iter().all(|v| v.is_finite()) || !b.iter().all(|v| v.is_finite()) {
        return Err(RkhsError::SingularSystem("non-finite system".into()));
    }
    let eig = SymEig::new(a);
    if eig.rank(SOLVE_RTOL) == 0 {
        if b.norm() == 0.0 {
            return Ok(DVector::zeros(a.ncols()));
        }
        return Err(RkhsError::SingularSystem("matrix is numerically zero".into()));
    }
    let x = eig.pinv(SOLVE_RTOL) * b;
    let resid = (a * &x - b).norm();
    let scale = a.norm() * x.norm() + b.norm();
    if resid > CONSISTENCY_RTOL * scale {
        return Err(RkhsError::SingularSystem(format!(
            "inconsistent system: residual {resid:.3e} against scale {scale:.3e}"
        )));
    }
    Ok(x)
}

/// `√q` for a quadratic form value, clamping rounding negatives to zero
/// but keeping NaN.
pub fn form_norm(q: f64) -> f64 {
    if q < 0.0 {
        0.0
    } else {
        q.sqrt()
    }
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.iter().fold(0.0f64, |m, &v| m.max(v))
}

/// Condition number `λmax / λmin` of a symmetric matrix, infinite when singular.
pub fn condition_number(eig: &SymEig) -> f64 {
    let lo = eig.min();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        eig.max() / lo
    }
}

/// Block-diagonal matrix from two blocks.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_sorted_descending() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -1.0]);
        let e = SymEig::new(&a);
        assert_eq!(e.values.as_slice(), &[5.0, 2.0, -1.0]);
        assert_eq!(e.rank(1e-12), 2);
    }

    #[test]
    fn pinv_solve_on_singular_consistent_system() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let x = pinv_solve(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_solve_rejects_inconsistent_rhs() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        assert!(pinv_solve(&a, &b).is_err());
    }

    #[test]
    fn sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = SymEig::new(&a).sqrt();
        assert!((&s * &s - &a).norm() < 1e-12);
    }
}
