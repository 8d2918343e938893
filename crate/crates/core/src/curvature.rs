//! Curvature of the metric `I + εD∞(α)` to first order in `ε`.
//!
//! Two independent routes are provided: finite differences of the metric
//! field, and closed forms in the moment tensors (valid for `G = I`). In the
//! first-order expansion the inverse metric is the identity, so every
//! quantity is a contraction of first or second derivatives of `D∞`.

use crate::coupling::Tensor3;
use crate::diffusion::DiffusionField;
use crate::error::{check_len, Error, Result};
use crate::moments::MomentTensor4;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// `α ↦ I + εD∞(α)`, optionally frozen at one displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricField {
    pub diffusion: DiffusionField,
    pub epsilon: f64,
    /// When set, `D∞` is evaluated at this `Δα` regardless of `α`.
    pub frozen_delta: Option<DVector<f64>>,
}

impl MetricField {
    pub fn new(diffusion: DiffusionField, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(MetricField { diffusion, epsilon, frozen_delta: None })
    }

    pub fn frozen(mut self, delta: DVector<f64>) -> Self {
        self.frozen_delta = Some(delta);
        self
    }

    pub fn k(&self) -> usize {
        self.diffusion.k()
    }

    pub fn d_inf(&self, alpha: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = match &self.frozen_delta {
            Some(delta) => self.diffusion.d_inf_at_delta(delta)?,
            None => self.diffusion.d_inf(alpha)?,
        };
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("metric is not finite at alpha = {:?}", alpha.as_slice())));
        }
        Ok(d)
    }

    pub fn metric(&self, alpha: &DVector<f64>) -> Result<DMatrix<f64>> {
        let k = self.k();
        Ok(DMatrix::identity(k, k) + self.d_inf(alpha)? * self.epsilon)
    }
}

/// Default finite-difference step `1e-3·(1 + max|α^μ|)`.
pub fn default_step(alpha: &DVector<f64>) -> f64 {
    1e-3 * (1.0 + alpha.amax())
}

/// Dense `K⁴` tensor `S[a][b][c][d] = ∂²D∞_{ab}/∂α^c∂α^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondDerivatives {
    k: usize,
    data: Vec<f64>,
}

impl SecondDerivatives {
    fn zeros(k: usize) -> Self {
        SecondDerivatives { k, data: vec![0.0; k.pow(4)] }
    }

    fn idx(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.k + b) * self.k + c) * self.k + d
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.idx(a, b, c, d)]
    }

    fn set(&mut self, a: usize, b: usize, c: usize, d: usize, v: f64) {
        let i = self.idx(a, b, c, d);
        self.data[i] = v;
    }
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")))
    }
}

fn shifted(alpha: &DVector<f64>, moves: &[(usize, f64)]) -> DVector<f64> {
    let mut a = alpha.clone();
    for &(i, v) in moves {
        a[i] += v;
    }
    a
}

/// Central-difference second derivatives of `D∞`.
pub fn second_derivatives_fd(field: &MetricField, alpha: &DVector<f64>, h: f64) -> Result<SecondDerivatives> {
    check_step(h)?;
    let k = field.k();
    check_len("alpha", k, alpha.len())?;
    let d0 = field.d_inf(alpha)?;
    let mut s = SecondDerivatives::zeros(k);
    for c in 0..k {
        for d in c..k {
            let m = if c == d {
                let up = field.d_inf(&shifted(alpha, &[(c, h)]))?;
                let down = field.d_inf(&shifted(alpha, &[(c, -h)]))?;
                (up - &d0 * 2.0 + down) / (h * h)
            } else {
                let pp = field.d_inf(&shifted(alpha, &[(c, h), (d, h)]))?;
                let pm = field.d_inf(&shifted(alpha, &[(c, h), (d, -h)]))?;
                let mp = field.d_inf(&shifted(alpha, &[(c, -h), (d, h)]))?;
                let mm = field.d_inf(&shifted(alpha, &[(c, -h), (d, -h)]))?;
                (pp - pm - mp + mm) / (4.0 * h * h)
            };
            for a in 0..k {
                for b in 0..k {
                    s.set(a, b, c, d, m[(a, b)]);
                    s.set(a, b, d, c, m[(a, b)]);
                }
            }
        }
    }
    Ok(s)
}

/// Exact second derivatives of `D∞ = 4σ²GᵀAG + 4GᵀX(Δα)G`; `X` is quadratic
/// in `Δα`, so these are constant.
pub fn second_derivatives_exact(field: &DiffusionField) -> SecondDerivatives {
    let k = field.k();
    let (a2, a4, g) = (&field.a2, &field.a4, &field.coupling.g);
    // ∂²X_{ηζ}/∂α^c∂α^d = M^{ηζ}_{cd} + M^{ηζ}_{dc}, M^{ηζ}_{pq} = A_{pηζq} − A_{pη}A_{ζq}.
    let m = |eta: usize, zeta: usize, p: usize, q: usize| a4.get(p, eta, zeta, q) - a2[(p, eta)] * a2[(zeta, q)];
    let mut s = SecondDerivatives::zeros(k);
    for c in 0..k {
        for d in 0..k {
            let x2 = DMatrix::from_fn(k, k, |eta, zeta| m(eta, zeta, c, d) + m(eta, zeta, d, c));
            let dd = g.transpose() * x2 * g * 4.0;
            for a in 0..k {
                for b in 0..k {
                    s.set(a, b, c, d, 0.5 * (dd[(a, b)] + dd[(b, a)]));
                }
            }
        }
    }
    s
}

/// `Γ^p_{ik} = (ε/2)(∂_k D_{pi} + ∂_i D_{pk} − ∂_p D_{ki})`, indexed `(p, i, k)`.
pub fn christoffel(field: &MetricField, alpha: &DVector<f64>, h: f64) -> Result<Tensor3> {
    check_step(h)?;
    let k = field.k();
    check_len("alpha", k, alpha.len())?;
    // dd[c] = ∂D/∂α^c
    let dd = (0..k)
        .map(|c| {
            let up = field.d_inf(&shifted(alpha, &[(c, h)]))?;
            let down = field.d_inf(&shifted(alpha, &[(c, -h)]))?;
            Ok((up - down) / (2.0 * h))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Tensor3::zeros(k);
    let half = 0.5 * field.epsilon;
    for p in 0..k {
        for i in 0..k {
            for kk in i..k {
                let v = half * (dd[kk][(p, i)] + dd[i][(p, kk)] - dd[p][(kk, i)]);
                t.set(p, i, kk, v);
                t.set(p, kk, i, v);
            }
        }
    }
    Ok(t)
}

/// `R_{ik} = (ε/2) Σ_{jp} {∂_j∂_k D_{pi} + ∂_i∂_j D_{kp} − ∂_j∂_p D_{ki} − ∂_i∂_k D_{pp}}`.
pub fn ricci_tensor_from(s: &SecondDerivatives, epsilon: f64) -> DMatrix<f64> {
    let k = s.k;
    DMatrix::from_fn(k, k, |i, kk| {
        let mut acc = 0.0;
        for j in 0..k {
            for p in 0..k {
                acc += s.get(p, i, j, kk) + s.get(kk, p, i, j) - s.get(kk, i, j, p) - s.get(p, p, i, kk);
            }
        }
        0.5 * epsilon * acc
    })
}

/// `R = (ε/2) Σ_{ijp} {2∂_j∂_i D_{ip} − ∂_j∂_p D_{ii} − ∂_i∂_i D_{pp}}`.
pub fn ricci_scalar_from(s: &SecondDerivatives, epsilon: f64) -> f64 {
    let k = s.k;
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            for p in 0..k {
                acc += 2.0 * s.get(i, p, j, i) - s.get(i, i, j, p) - s.get(p, p, i, i);
            }
        }
    }
    0.5 * epsilon * acc
}

pub fn ricci_tensor_fd(field: &MetricField, alpha: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    Ok(ricci_tensor_from(&second_derivatives_fd(field, alpha, h)?, field.epsilon))
}

pub fn ricci_scalar_fd(field: &MetricField, alpha: &DVector<f64>, h: f64) -> Result<f64> {
    Ok(ricci_scalar_from(&second_derivatives_fd(field, alpha, h)?, field.epsilon))
}

/// `Ric − ½ δ R`, both from the same finite-difference derivatives.
pub fn einstein_fd(field: &MetricField, alpha: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let s = second_derivatives_fd(field, alpha, h)?;
    Ok(einstein_from(&s, field.epsilon))
}

fn einstein_from(s: &SecondDerivatives, epsilon: f64) -> DMatrix<f64> {
    let ric = ricci_tensor_from(s, epsilon);
    let r = ricci_scalar_from(s, epsilon);
    let k = s.k;
    ric - DMatrix::identity(k, k) * (0.5 * r)
}

/// Ricci scalar of the closed form for independent parameters:
/// `2ε Σ_{ijp}(2A_{iipj} + A_{pi}A_{ij} + A_{ip}A_{pi} − A_{piij} − A_{ippi} − 2A_{ii}A_{pj})`.
pub fn ricci_scalar_closed(a2: &DMatrix<f64>, a4: &MomentTensor4, epsilon: f64) -> Result<f64> {
    let k = a2.nrows();
    check_len("fourth-moment tensor", k, a4.k())?;
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            for p in 0..k {
                acc += 2.0 * a4.get(i, i, p, j) + a2[(p, i)] * a2[(i, j)] + a2[(i, p)] * a2[(p, i)]
                    - a4.get(p, i, i, j)
                    - a4.get(i, p, p, i)
                    - 2.0 * a2[(i, i)] * a2[(p, j)];
            }
        }
    }
    Ok(2.0 * epsilon * acc)
}

/// Ricci scalar from the exact second derivatives of `D∞`, contracted like
/// the finite-difference route. For `G = I` this is
/// `2ε Σ_{ijp}(2A_{iipj} − 2A_{iipp} − 2A_{ii}A_{pj} + 2A_{ip}²)`.
pub fn ricci_scalar_analytic(field: &DiffusionField, epsilon: f64) -> f64 {
    ricci_scalar_from(&second_derivatives_exact(field), epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EinsteinClosed {
    /// Term-by-term evaluation, not necessarily symmetric.
    pub raw: DMatrix<f64>,
    pub symmetrized: DMatrix<f64>,
    pub asymmetry_norm: f64,
}

/// Closed-form Einstein tensor for independent parameters. The first sum is
/// over `(j, p)` with `i, k` free, including the `A_{ik}A_{ip}` term; the
/// second is `−½ δ_{ik}` times the closed-form Ricci scalar.
pub fn einstein_tensor_closed(a2: &DMatrix<f64>, a4: &MomentTensor4, epsilon: f64) -> Result<EinsteinClosed> {
    let k = a2.nrows();
    check_len("fourth-moment tensor", k, a4.k())?;
    let r = ricci_scalar_closed(a2, a4, epsilon)?;
    let raw = DMatrix::from_fn(k, k, |i, kk| {
        let mut acc = 0.0;
        for j in 0..k {
            for p in 0..k {
                acc += a4.get(j, p, i, kk) - a2[(j, p)] * a2[(i, kk)] + a4.get(i, kk, p, j)
                    - a2[(i, kk)] * a2[(i, p)]
                    - a4.get(j, kk, i, p)
                    + a2[(j, kk)] * a2[(i, p)]
                    - a4.get(i, p, p, kk)
                    + a2[(i, p)] * a2[(p, kk)];
            }
        }
        2.0 * epsilon * acc - if i == kk { 0.5 * r } else { 0.0 }
    });
    let mut symmetrized = raw.clone();
    let asymmetry_norm = crate::linalg::symmetrize(&mut symmetrized);
    Ok(EinsteinClosed { raw, symmetrized, asymmetry_norm })
}

/// `|tr E − (1 − K/2) R|`.
pub fn trace_identity_residual(e: &DMatrix<f64>, r: f64) -> f64 {
    let k = e.nrows() as f64;
    (e.trace() - (1.0 - 0.5 * k) * r).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub k: usize,
    pub epsilon: f64,
    pub h: f64,
    pub alpha: Vec<f64>,
    pub ricci_fd: f64,
    /// Finite-difference Ricci scalar at `h/2` (Richardson companion).
    pub ricci_fd_half_step: f64,
    pub ricci_analytic: f64,
    /// Closed forms, present only when `G = I`.
    pub ricci_closed: Option<f64>,
    pub einstein_closed: Option<EinsteinClosed>,
    pub ricci_tensor_fd: DMatrix<f64>,
    pub einstein_fd: DMatrix<f64>,
    pub fd_closed_abs_diff: Option<f64>,
    pub fd_analytic_abs_diff: f64,
    pub trace_residual_fd: f64,
    pub trace_residual_closed: Option<f64>,
}

pub fn curvature_report(field: &MetricField, alpha: &DVector<f64>, h: f64) -> Result<CurvatureReport> {
    let eps = field.epsilon;
    let s = second_derivatives_fd(field, alpha, h)?;
    let ricci_fd = ricci_scalar_from(&s, eps);
    let einstein = einstein_from(&s, eps);
    let ricci_fd_half_step = ricci_scalar_fd(field, alpha, 0.5 * h)?;
    let ricci_analytic = ricci_scalar_analytic(&field.diffusion, eps);
    let k = field.k();
    let identity = field.diffusion.coupling.g == DMatrix::identity(k, k);
    let (ricci_closed, einstein_closed) = if identity {
        let a2 = &field.diffusion.a2;
        let a4 = &field.diffusion.a4;
        (Some(ricci_scalar_closed(a2, a4, eps)?), Some(einstein_tensor_closed(a2, a4, eps)?))
    } else {
        (None, None)
    };
    Ok(CurvatureReport {
        k,
        epsilon: eps,
        h,
        alpha: alpha.iter().copied().collect(),
        ricci_fd,
        ricci_fd_half_step,
        ricci_analytic,
        fd_closed_abs_diff: ricci_closed.map(|r| (r - ricci_fd).abs()),
        fd_analytic_abs_diff: (ricci_analytic - ricci_fd).abs(),
        trace_residual_fd: trace_identity_residual(&einstein, ricci_fd),
        trace_residual_closed: einstein_closed
            .as_ref()
            .zip(ricci_closed)
            .map(|(e, r)| trace_identity_residual(&e.raw, r)),
        ricci_tensor_fd: ricci_tensor_from(&s, eps),
        einstein_fd: einstein,
        ricci_closed,
        einstein_closed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingMatrix;
    use crate::model::{BasisSet, InputDist};
    use crate::moments::{estimate_a2, estimate_a4, MomentMode, Sampling};
    use approx::assert_relative_eq;

    fn field(powers: &[u32], eps: f64) -> MetricField {
        let b = BasisSet::monomials(powers);
        let s = Sampling::new(2, 0);
        let a2 = estimate_a2(&b, InputDist::default(), &s, MomentMode::Exact).unwrap().a2;
        let a4 = estimate_a4(&b, InputDist::default(), &s, MomentMode::Exact).unwrap();
        let k = b.len();
        let d = DiffusionField::new(a2, a4, CouplingMatrix::identity(k), 0.1, DVector::zeros(k)).unwrap();
        MetricField::new(d, eps).unwrap()
    }

    #[test]
    fn scalar_basis_is_flat() {
        let f = field(&[1], 0.01);
        let a = DVector::from_element(1, 0.3);
        assert!(ricci_scalar_fd(&f, &a, 1e-3).unwrap().abs() < 1e-6);
        assert_eq!(ricci_scalar_closed(&f.diffusion.a2, &f.diffusion.a4, 0.01).unwrap(), 0.0);
        let e = einstein_tensor_closed(&f.diffusion.a2, &f.diffusion.a4, 0.01).unwrap();
        assert_eq!(e.raw[(0, 0)], 0.0);
    }

    #[test]
    fn flat_at_zero_epsilon_and_frozen() {
        let f = field(&[0, 1, 2], 0.0);
        let a = DVector::from_vec(vec![0.1, 0.2, -0.1]);
        assert_eq!(christoffel(&f, &a, 1e-3).unwrap().max_abs(), 0.0);
        assert_eq!(ricci_scalar_fd(&f, &a, 1e-3).unwrap(), 0.0);
        let frozen = field(&[0, 1, 2], 0.01).frozen(DVector::from_vec(vec![0.1, 0.0, 0.1]));
        assert_eq!(christoffel(&frozen, &a, 1e-3).unwrap().max_abs(), 0.0);
        assert_eq!(ricci_scalar_fd(&frozen, &a, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn christoffel_symmetric_in_lower_indices() {
        let f = field(&[0, 1, 2], 0.01);
        let a = DVector::from_vec(vec![0.1, 0.2, -0.1]);
        let g = christoffel(&f, &a, 1e-3).unwrap();
        for p in 0..3 {
            for i in 0..3 {
                for k in 0..3 {
                    assert_eq!(g.get(p, i, k), g.get(p, k, i));
                }
            }
        }
    }

    #[test]
    fn fd_matches_exact_derivatives() {
        let f = field(&[0, 1, 2], 0.01);
        let a = DVector::from_vec(vec![0.1, 0.2, -0.1]);
        let r = ricci_scalar_fd(&f, &a, 1e-3).unwrap();
        let exact = ricci_scalar_analytic(&f.diffusion, 0.01);
        assert_relative_eq!(r, exact, max_relative = 1e-6);
    }

    #[test]
    fn fd_trace_identity() {
        let f = field(&[0, 1, 2], 0.01);
        let a = DVector::from_vec(vec![0.1, 0.2, -0.1]);
        let rep = curvature_report(&f, &a, 1e-3).unwrap();
        assert!(rep.trace_residual_fd <= 1e-10 * rep.ricci_fd.abs());
    }
}
