//! Coupling between parameters through an underlying weight map
//! `α = g(w)`, and the loss Hessian built from it.
//!
//! `G[(μ, η)]` holds `∂α^μ/∂α^η`. Contractions follow the gradient chain rule,
//! so the quadratic term of the Hessian is `Gᵀ A G`.

use crate::error::{check_len, Error, Result};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Relative singular-value cutoff for the Jacobian pseudo-inverse.
pub const PINV_TOLERANCE: f64 = 1e-10;

pub type MapFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapMode {
    Identity,
    AnalyticJacobian,
    FiniteDifference,
}

/// `α = g(w)` from `L` weights to `K` parameters.
#[derive(Clone)]
pub struct ParameterMap {
    k: usize,
    l: usize,
    mode: MapMode,
    g: Option<MapFn>,
    jacobian: Option<JacobianFn>,
}

impl fmt::Debug for ParameterMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterMap")
            .field("k", &self.k)
            .field("l", &self.l)
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

impl ParameterMap {
    pub fn identity(k: usize) -> Self {
        ParameterMap { k, l: k, mode: MapMode::Identity, g: None, jacobian: None }
    }

    pub fn analytic(l: usize, k: usize, g: MapFn, jacobian: JacobianFn) -> Self {
        ParameterMap { k, l, mode: MapMode::AnalyticJacobian, g: Some(g), jacobian: Some(jacobian) }
    }

    /// Jacobian by central differences with step `1e-6·(1 + |w_l|)`.
    pub fn finite_difference(l: usize, k: usize, g: MapFn) -> Self {
        ParameterMap { k, l, mode: MapMode::FiniteDifference, g: Some(g), jacobian: None }
    }

    /// `g(w₁, w₂) = (w₁, w₁·w₂)` with its analytic Jacobian.
    pub fn product() -> Self {
        ParameterMap::analytic(
            2,
            2,
            Arc::new(|w: &[f64]| vec![w[0], w[0] * w[1]]),
            Arc::new(|w: &[f64]| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, w[1], w[0]])),
        )
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn mode(&self) -> MapMode {
        self.mode
    }

    pub fn is_identity(&self) -> bool {
        self.mode == MapMode::Identity
    }

    pub fn eval(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len("weights", self.l, w.len())?;
        let out = match &self.g {
            None => w.to_vec(),
            Some(g) => g(w),
        };
        check_len("parameter map output", self.k, out.len())?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("parameter map is not finite at w = {w:?}")));
        }
        Ok(out)
    }

    /// `J_{μl} = ∂g^μ/∂w_l`.
    pub fn jacobian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        check_len("weights", self.l, w.len())?;
        match self.mode {
            MapMode::Identity => Ok(DMatrix::identity(self.k, self.k)),
            MapMode::AnalyticJacobian => {
                let j = (self.jacobian.as_ref().expect("analytic map has a Jacobian"))(w);
                check_len("jacobian rows", self.k, j.nrows())?;
                check_len("jacobian cols", self.l, j.ncols())?;
                Ok(j)
            }
            MapMode::FiniteDifference => self.fd_jacobian(w),
        }
    }

    /// Central-difference Jacobian, available for every mode.
    pub fn fd_jacobian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.k, self.l);
        let mut wp = w.to_vec();
        for l in 0..self.l {
            let h = 1e-6 * (1.0 + w[l].abs());
            wp[l] = w[l] + h;
            let up = self.eval(&wp)?;
            wp[l] = w[l] - h;
            let down = self.eval(&wp)?;
            wp[l] = w[l];
            for mu in 0..self.k {
                j[(mu, l)] = (up[mu] - down[mu]) / (2.0 * h);
            }
        }
        Ok(j)
    }
}

/// `G = J J⁺` with the diagonal set to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    pub g: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
    pub tolerance: f64,
    pub rank: usize,
    /// Set when `J` is rank-deficient.
    pub warning: Option<String>,
}

impl CouplingMatrix {
    pub fn identity(k: usize) -> Self {
        CouplingMatrix {
            g: DMatrix::identity(k, k),
            jacobian: DMatrix::identity(k, k),
            tolerance: PINV_TOLERANCE,
            rank: k,
            warning: None,
        }
    }

    pub fn k(&self) -> usize {
        self.g.nrows()
    }

    pub fn is_symmetric(&self) -> bool {
        self.g == self.g.transpose()
    }
}

pub fn coupling_matrix(pmap: &ParameterMap, w: &[f64]) -> Result<CouplingMatrix> {
    if pmap.is_identity() {
        check_len("weights", pmap.k(), w.len())?;
        return Ok(CouplingMatrix::identity(pmap.k()));
    }
    let j = pmap.jacobian(w)?;
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("Jacobian is not finite at w = {w:?}")));
    }
    let (pinv, rank) = linalg::pseudo_inverse(&j, PINV_TOLERANCE);
    let mut g = &j * pinv;
    for mu in 0..g.nrows() {
        g[(mu, mu)] = 1.0;
    }
    let full = j.nrows().min(j.ncols());
    let warning = (rank < full).then(|| {
        format!("Jacobian has rank {rank} below full rank {full}; coupling uses the truncated pseudo-inverse")
    });
    Ok(CouplingMatrix { g, jacobian: j, tolerance: PINV_TOLERANCE, rank, warning })
}

/// Dense `K×K×K` tensor indexed `(μ, η, ζ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    k: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(k: usize) -> Self {
        Tensor3 { k, data: vec![0.0; k * k * k] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.k + b) * self.k + c]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        self.data[(a * self.k + b) * self.k + c] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }
}

/// `H_{ζη} = 2 Σ 𝒢^μ_{ηζ} A_{μν} Δα^ν + 2 (Gᵀ A G)_{ηζ}`; `g_second` defaults
/// to zero.
pub fn hessian(
    a2: &DMatrix<f64>,
    g: &DMatrix<f64>,
    delta_alpha: &DVector<f64>,
    g_second: Option<&Tensor3>,
) -> Result<DMatrix<f64>> {
    let k = a2.nrows();
    check_len("A2 columns", k, a2.ncols())?;
    check_len("coupling rows", k, g.nrows())?;
    check_len("coupling cols", k, g.ncols())?;
    check_len("delta_alpha", k, delta_alpha.len())?;
    let mut h = g.transpose() * a2 * g * 2.0;
    if let Some(t) = g_second {
        check_len("second-derivative tensor", k, t.k())?;
        let a_delta = a2 * delta_alpha;
        for zeta in 0..k {
            for eta in 0..k {
                let s: f64 = (0..k).map(|mu| t.get(mu, eta, zeta) * a_delta[mu]).sum();
                h[(zeta, eta)] += 2.0 * s;
            }
        }
    }
    Ok(h)
}

/// `𝒢^μ_{ηζ} = ∂G_{μη}/∂α^ζ`, by central differences of `G` along weight
/// directions `J⁺ e_ζ` that move `α` along its `ζ`-th axis to first order.
pub fn second_derivative_fd(pmap: &ParameterMap, w: &[f64], h: f64) -> Result<Tensor3> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let k = pmap.k();
    if pmap.is_identity() {
        return Ok(Tensor3::zeros(k));
    }
    let j = pmap.jacobian(w)?;
    let (pinv, _) = linalg::pseudo_inverse(&j, PINV_TOLERANCE);
    let mut t = Tensor3::zeros(k);
    let w0 = DVector::from_column_slice(w);
    for zeta in 0..k {
        let dir = pinv.column(zeta).into_owned();
        let up = coupling_matrix(pmap, (&w0 + &dir * h).as_slice())?;
        let down = coupling_matrix(pmap, (&w0 - &dir * h).as_slice())?;
        for mu in 0..k {
            for eta in 0..k {
                t.set(mu, eta, zeta, (up.g[(mu, eta)] - down.g[(mu, eta)]) / (2.0 * h));
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_map_gives_identity() {
        let c = coupling_matrix(&ParameterMap::identity(3), &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(c.g, DMatrix::identity(3, 3));
        assert!(c.warning.is_none());
    }

    #[test]
    fn product_map_matches_brute_force() {
        let pm = ParameterMap::product();
        let c = coupling_matrix(&pm, &[1.0, 1.0]).unwrap();
        // J = [[1,0],[1,1]] is invertible, so J J⁺ = I before the diagonal fix.
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let brute = &j * j.clone().try_inverse().unwrap();
        for mu in 0..2 {
            for nu in 0..2 {
                let want = if mu == nu { 1.0 } else { brute[(mu, nu)] };
                assert!((c.g[(mu, nu)] - want).abs() < 1e-6);
            }
        }
        let fd = pm.fd_jacobian(&[1.0, 1.0]).unwrap();
        assert!((fd - j).abs().max() < 1e-6);
    }

    #[test]
    fn thin_jacobian_gives_projector() {
        // L = 1 < K = 2: α = (w, 2w).
        let pm = ParameterMap::analytic(
            1,
            2,
            Arc::new(|w: &[f64]| vec![w[0], 2.0 * w[0]]),
            Arc::new(|_: &[f64]| DMatrix::from_column_slice(2, 1, &[1.0, 2.0])),
        );
        let c = coupling_matrix(&pm, &[0.7]).unwrap();
        let (pinv, rank) = linalg::pseudo_inverse(&c.jacobian, PINV_TOLERANCE);
        assert_eq!(rank, 1);
        let p = &c.jacobian * pinv;
        assert!((&p * &p - &p).abs().max() < 1e-10);
        assert_eq!(c.g[(0, 0)], 1.0);
        assert_eq!(c.g[(1, 1)], 1.0);
        assert_relative_eq!(c.g[(0, 1)], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn rank_deficiency_is_a_warning() {
        let pm = ParameterMap::analytic(
            2,
            2,
            Arc::new(|w: &[f64]| vec![w[0] + w[1], w[0] + w[1]]),
            Arc::new(|_: &[f64]| DMatrix::from_element(2, 2, 1.0)),
        );
        let c = coupling_matrix(&pm, &[1.0, 2.0]).unwrap();
        assert_eq!(c.rank, 1);
        assert!(c.warning.is_some());
    }

    #[test]
    fn hessian_limit_is_twice_gag() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 3.0]);
        let h = hessian(&a, &DMatrix::identity(3, 3), &DVector::zeros(3), None).unwrap();
        assert_eq!(h, &a * 2.0);
        let mut t = Tensor3::zeros(3);
        t.set(0, 1, 2, 5.0);
        let h0 = hessian(&a, &DMatrix::identity(3, 3), &DVector::zeros(3), Some(&t)).unwrap();
        assert_eq!(h0, &a * 2.0);
        assert!(hessian(&a, &DMatrix::identity(2, 2), &DVector::zeros(3), None).is_err());
    }

    #[test]
    fn identity_map_has_no_second_derivatives() {
        let t = second_derivative_fd(&ParameterMap::identity(2), &[1.0, 2.0], 1e-4).unwrap();
        assert_eq!(t.max_abs(), 0.0);
    }
}
