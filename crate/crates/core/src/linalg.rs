//! Small dense linear-algebra helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Replaces `m` by `(m + mᵀ)/2` and returns the Frobenius norm of `m - mᵀ`
/// measured before the replacement.
pub fn symmetrize(m: &mut DMatrix<f64>) -> f64 {
    let asym = (&*m - m.transpose()).norm();
    let s = (&*m + m.transpose()) * 0.5;
    *m = s;
    asym
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Moore–Penrose pseudo-inverse; singular values below
/// `rel_tol * sigma_max` are treated as zero. Returns the inverse and the
/// numerical rank.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = rel_tol * smax;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut inv = DMatrix::zeros(m.ncols(), m.nrows());
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            rank += 1;
            inv += (vt.row(i).transpose() * u.column(i).transpose()) / s;
        }
    }
    (inv, rank)
}

/// `exp(-scale * A)` for symmetric `A` via its eigendecomposition.
pub fn sym_exp_neg(a: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| (-scale * l).exp()));
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Lower Cholesky factor, or `Error::Singular` naming `what`.
pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    m.clone().cholesky().ok_or(Error::Singular(what))
}

/// Relative Frobenius distance `|a - b| / |b|`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_of_full_column_rank_is_left_inverse() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
        let (p, rank) = pseudo_inverse(&j, 1e-10);
        assert_eq!(rank, 2);
        assert_relative_eq!(&p * &j, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn pinv_truncates_rank() {
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let (_, rank) = pseudo_inverse(&j, 1e-10);
        assert_eq!(rank, 1);
    }

    #[test]
    fn exp_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let e = sym_exp_neg(&a, 0.5);
        assert_relative_eq!(e[(0, 0)], (-0.5f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-1.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(e[(0, 1)], 0.0, epsilon = 1e-14);
    }
}
