use crate::error::{check_len, Error, Result};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

fn max_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m == &m.transpose() {
        linalg::max_sym_eigenvalue(m)
    } else {
        m.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `sqrt(σ²|λ_max(GAG)| / (det(F²)|λ_max(G²)| − det(F)|λ_max(GAG)|))`,
/// defined only when `GAG` has a negative largest eigenvalue.
pub fn order_bound(gag: &DMatrix<f64>, g: &DMatrix<f64>, f: &DMatrix<f64>, sigma: f64) -> Result<f64> {
    let k = gag.nrows();
    check_len("coupling", k, g.nrows())?;
    check_len("F", k, f.nrows())?;
    let l_gag = max_real_eigenvalue(gag);
    if !(l_gag < 0.0) {
        return Err(Error::RegimeNotApplicable(l_gag));
    }
    let l_g2 = max_real_eigenvalue(&(g * g));
    let det_f = f.determinant();
    let denom = (f * f).determinant() * l_g2.abs() - det_f * l_gag.abs();
    if !(denom > 0.0) {
        return Err(Error::BoundUndefined(denom));
    }
    Ok((sigma * sigma * l_gag.abs() / denom).sqrt())
}

fn spd_inverse(sigma_alpha: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = linalg::cholesky(sigma_alpha, "parameter covariance")?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((chol.inverse(), log_det))
}

/// `Φ = β⁻¹[(K/2) log|Σ| + (K/2) log 2π + ½ (α − m)ᵀ Σ⁻¹ (α − m)]`.
pub fn potential_phi(sigma_alpha: &DMatrix<f64>, mean: &DVector<f64>, alpha: &DVector<f64>, beta: f64) -> Result<f64> {
    let k = sigma_alpha.nrows();
    check_len("mean", k, mean.len())?;
    check_len("alpha", k, alpha.len())?;
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let (inv, log_det) = spd_inverse(sigma_alpha)?;
    let d = alpha - mean;
    let kf = k as f64;
    Ok((0.5 * kf * log_det + 0.5 * kf * (2.0 * PI).ln() + 0.5 * d.dot(&(&inv * &d))) / beta)
}

/// `∇Φ = β⁻¹ Σ⁻¹ (α − m)`.
pub fn potential_phi_gradient(
    sigma_alpha: &DMatrix<f64>,
    mean: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: f64,
) -> Result<DVector<f64>> {
    let (inv, _) = spd_inverse(sigma_alpha)?;
    Ok(inv * (alpha - mean) / beta)
}

/// The coupled variant `2β⁻¹ G Σ⁻¹ (α − m)`, reported alongside the direct
/// gradient for comparison.
pub fn potential_phi_gradient_coupled(
    sigma_alpha: &DMatrix<f64>,
    g: &DMatrix<f64>,
    mean: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: f64,
) -> Result<DVector<f64>> {
    Ok(g * potential_phi_gradient(sigma_alpha, mean, alpha, beta)? * 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn order_bound_examples() {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        let b = order_bound(&m(-0.01), &m(1.0), &m(2.0), 0.1).unwrap();
        assert_relative_eq!(b, (0.0001f64 / 3.98).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(b, 5.012e-3, epsilon = 1e-6);
        assert!(matches!(order_bound(&m(0.5), &m(1.0), &m(2.0), 0.1), Err(Error::RegimeNotApplicable(_))));
        assert!(matches!(order_bound(&m(-0.01), &m(1.0), &m(0.0), 0.1), Err(Error::BoundUndefined(_))));
    }

    #[test]
    fn scalar_potential() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let v = potential_phi(&one, &DVector::zeros(1), &DVector::from_element(1, 1.0), 1.0).unwrap();
        assert_relative_eq!(v, 0.5 * (2.0 * PI).ln() + 0.5, epsilon = 1e-14);
        assert_relative_eq!(v, 1.4189, epsilon = 1e-4);
        assert!(potential_phi(&DMatrix::zeros(1, 1), &DVector::zeros(1), &DVector::zeros(1), 1.0).is_err());
    }

    #[test]
    fn minimum_at_mean() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let m = DVector::from_vec(vec![0.1, -0.2]);
        let v = potential_phi(&s, &m, &m, 4.0).unwrap();
        assert_relative_eq!(v, (s.determinant().ln() + (2.0 * PI).ln()) / 4.0, epsilon = 1e-12);
    }
}
