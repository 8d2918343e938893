//! Gradient-noise covariance: the empirical diffusion matrix, its large-N
//! form `D∞ = 4σ² GᵀAG + 4C∞`, and the metric `I + εD∞`.

use crate::coupling::CouplingMatrix;
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::model::{generate_dataset, loss_and_gradients, BasisSet, InputDist, ParameterState};
use crate::moments::{sample_a2, sample_a4, sample_variance_matrices, FeatureSource, MomentTensor4, Sampling};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Covariance of per-sample gradient rows, normalized by `N`.
pub fn empirical_diffusion(per_sample: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = per_sample.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 gradient rows, got {n}")));
    }
    let mean = per_sample.row_mean();
    let mut centered = per_sample.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut d = centered.transpose() * &centered / n as f64;
    linalg::symmetrize(&mut d);
    Ok(d)
}

/// `X_{ηζ} = Σ_{pk} Δ^p {A_{pηζk} − A_{pη}A_{ζk}} Δ^k`, the covariance of
/// `(Δα·φ) φ` under the input law.
pub fn moment_contraction(a2: &DMatrix<f64>, a4: &MomentTensor4, delta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let k = a2.nrows();
    check_len("fourth-moment tensor", k, a4.k())?;
    check_len("delta_alpha", k, delta.len())?;
    let ad = a2 * delta;
    let mut x = DMatrix::zeros(k, k);
    for eta in 0..k {
        for zeta in eta..k {
            let mut s = 0.0;
            for p in 0..k {
                for q in 0..k {
                    s += delta[p] * delta[q] * a4.get(p, eta, zeta, q);
                }
            }
            s -= ad[eta] * ad[zeta];
            x[(eta, zeta)] = s;
            x[(zeta, eta)] = s;
        }
    }
    Ok(x)
}

/// `C∞ = Gᵀ X G`, symmetrized. Returns the matrix and the pre-symmetrization
/// asymmetry norm.
pub fn c_infinity(
    a4: &MomentTensor4,
    a2: &DMatrix<f64>,
    g: &CouplingMatrix,
    delta: &DVector<f64>,
) -> Result<(DMatrix<f64>, f64)> {
    check_len("coupling", a2.nrows(), g.k())?;
    let x = moment_contraction(a2, a4, delta)?;
    let mut c = g.g.transpose() * x * &g.g;
    let asym = linalg::symmetrize(&mut c);
    Ok((c, asym))
}

/// `D∞ = 4σ² GᵀAG + 4C∞`, symmetrized. Returns the matrix and the
/// pre-symmetrization asymmetry norm.
pub fn d_infinity(
    a2: &DMatrix<f64>,
    a4: &MomentTensor4,
    g: &CouplingMatrix,
    delta: &DVector<f64>,
    sigma: f64,
) -> Result<(DMatrix<f64>, f64)> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    let (c, _) = c_infinity(a4, a2, g, delta)?;
    let gag = g.g.transpose() * a2 * &g.g;
    let mut d = gag * (4.0 * sigma * sigma) + c * 4.0;
    let asym = linalg::symmetrize(&mut d);
    Ok((d, asym))
}

/// Everything needed to evaluate `D∞` as a function of `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionField {
    pub a2: DMatrix<f64>,
    pub a4: MomentTensor4,
    pub coupling: CouplingMatrix,
    pub sigma: f64,
    pub alpha_bar: DVector<f64>,
}

impl DiffusionField {
    pub fn new(
        a2: DMatrix<f64>,
        a4: MomentTensor4,
        coupling: CouplingMatrix,
        sigma: f64,
        alpha_bar: DVector<f64>,
    ) -> Result<Self> {
        let k = a2.nrows();
        check_len("fourth-moment tensor", k, a4.k())?;
        check_len("coupling", k, coupling.k())?;
        check_len("alpha_bar", k, alpha_bar.len())?;
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(DiffusionField { a2, a4, coupling, sigma, alpha_bar })
    }

    pub fn k(&self) -> usize {
        self.a2.nrows()
    }

    pub fn gag(&self) -> DMatrix<f64> {
        self.coupling.g.transpose() * &self.a2 * &self.coupling.g
    }

    pub fn c_inf_at_delta(&self, delta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(c_infinity(&self.a4, &self.a2, &self.coupling, delta)?.0)
    }

    pub fn d_inf_at_delta(&self, delta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(d_infinity(&self.a2, &self.a4, &self.coupling, delta, self.sigma)?.0)
    }

    pub fn d_inf(&self, alpha: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len("alpha", self.k(), alpha.len())?;
        self.d_inf_at_delta(&(alpha - &self.alpha_bar))
    }
}

/// `I + εD∞`; rejects `ε ≥ 1/λ_max(D∞)`.
pub fn diffusion_metric(d_inf: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    check_admissible(d_inf, epsilon)?;
    let k = d_inf.nrows();
    Ok(DMatrix::identity(k, k) + d_inf * epsilon)
}

pub fn check_admissible(d_inf: &DMatrix<f64>, epsilon: f64) -> Result<()> {
    let lambda_max = linalg::max_sym_eigenvalue(d_inf);
    let bound = if lambda_max > 0.0 { 1.0 / lambda_max } else { f64::INFINITY };
    if !(epsilon >= 0.0 && epsilon < bound) {
        return Err(Error::EpsilonOutOfRange { epsilon, lambda_max, bound });
    }
    Ok(())
}

/// Half the admissible bound, `0.5/λ_max(D∞)`; `1` when `D∞` has no
/// positive eigenvalue.
pub fn default_epsilon(d_inf: &DMatrix<f64>) -> f64 {
    let lambda_max = linalg::max_sym_eigenvalue(d_inf);
    if lambda_max > 0.0 {
        0.5 / lambda_max
    } else {
        1.0
    }
}

/// Right-hand side of the C∞ decomposition:
/// `2 Σ_{μηζ} V^{μηζ}V^{μζη} Y_{ζη} + [2 yᵀG A Gᵀy][2 Σ_p (Δα^p)² F_pp]`
/// with `V^{μpη} = y^μ G_{μη} Δα^p`.
pub fn lemma1_quadratic_form(
    y: &DVector<f64>,
    g: &DMatrix<f64>,
    delta: &DVector<f64>,
    a2: &DMatrix<f64>,
    var_products: &DMatrix<f64>,
    var_phi: &DMatrix<f64>,
) -> Result<f64> {
    let k = y.len();
    for (what, got) in [
        ("delta_alpha", delta.len()),
        ("coupling", g.nrows()),
        ("A2", a2.nrows()),
        ("Y", var_products.nrows()),
        ("F", var_phi.nrows()),
    ] {
        check_len(what, k, got)?;
    }
    let mut first = 0.0;
    for mu in 0..k {
        for eta in 0..k {
            for zeta in 0..k {
                let v1 = y[mu] * g[(mu, zeta)] * delta[eta];
                let v2 = y[mu] * g[(mu, eta)] * delta[zeta];
                first += v1 * v2 * var_products[(zeta, eta)];
            }
        }
    }
    let gy = g.transpose() * y;
    let quad = 2.0 * gy.dot(&(a2 * &gy));
    let spread: f64 = 2.0 * (0..k).map(|p| delta[p] * delta[p] * var_phi[(p, p)]).sum::<f64>();
    Ok(2.0 * first + quad * spread)
}

/// One check of the C∞ decomposition on a feature ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    pub y: Vec<f64>,
    /// `yᵀC∞y` from sampled moments.
    pub direct: f64,
    /// The decomposition evaluated on sampled `A`, `Y`, `F`.
    pub decomposition: f64,
    /// Standard error of `decomposition − direct` from batch means.
    pub std_err: f64,
}

impl DecompositionCheck {
    pub fn z_score(&self) -> f64 {
        (self.decomposition - self.direct).abs() / self.std_err
    }
}

/// Compares `yᵀC∞y` with its decomposition on `source`, using `batches`
/// independent batches of `sampling.n / batches` draws each.
pub fn lemma1_comparison<S: FeatureSource + ?Sized>(
    source: &S,
    g: &CouplingMatrix,
    delta: &DVector<f64>,
    ys: &[DVector<f64>],
    sampling: &Sampling,
    batches: usize,
) -> Result<Vec<DecompositionCheck>> {
    if batches < 2 {
        return Err(Error::InvalidArgument("need at least 2 batches".into()));
    }
    let per = Sampling { n: sampling.n / batches, ..*sampling };
    let mut direct = vec![Vec::with_capacity(batches); ys.len()];
    let mut decomp = vec![Vec::with_capacity(batches); ys.len()];
    for b in 0..batches {
        let s = Sampling { seed: rng::derive_seed(sampling.seed, b as u64), ..per };
        let a2 = sample_a2(source, &s)?.a2;
        let a4 = sample_a4(source, &s)?;
        let v = sample_variance_matrices(source, &s)?;
        let (c, _) = c_infinity(&a4, &a2, g, delta)?;
        for (i, y) in ys.iter().enumerate() {
            direct[i].push(y.dot(&(&c * y)));
            decomp[i].push(lemma1_quadratic_form(y, &g.g, delta, &a2, &v.y, &v.f)?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ys
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let diffs: Vec<f64> = decomp[i].iter().zip(&direct[i]).map(|(a, b)| a - b).collect();
            let m = mean(&diffs);
            let var = diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
            DecompositionCheck {
                y: y.iter().copied().collect(),
                direct: mean(&direct[i]),
                decomposition: mean(&decomp[i]),
                std_err: (var / batches as f64).sqrt(),
            }
        })
        .collect())
}

/// Serializable snapshot of the diffusion quantities at one `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionState {
    pub d_empirical: Option<DMatrix<f64>>,
    pub c_inf: DMatrix<f64>,
    pub d_inf: DMatrix<f64>,
    pub epsilon: f64,
    pub d_metric: DMatrix<f64>,
    pub asymmetry_norm: f64,
    pub d_inf_eigenvalues: Vec<f64>,
}

impl DiffusionState {
    /// Evaluates the field at `Δα`; `epsilon = None` picks the default.
    pub fn at(field: &DiffusionField, delta: &DVector<f64>, epsilon: Option<f64>) -> Result<Self> {
        let (c_inf, _) = c_infinity(&field.a4, &field.a2, &field.coupling, delta)?;
        let (d_inf, asymmetry_norm) = d_infinity(&field.a2, &field.a4, &field.coupling, delta, field.sigma)?;
        let epsilon = epsilon.unwrap_or_else(|| default_epsilon(&d_inf));
        let d_metric = diffusion_metric(&d_inf, epsilon)?;
        Ok(DiffusionState {
            d_empirical: None,
            d_inf_eigenvalues: linalg::sym_eigenvalues(&d_inf),
            c_inf,
            d_inf,
            epsilon,
            d_metric,
            asymmetry_norm,
        })
    }
}

/// One point on the empirical-vs-limit convergence curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Identity1Point {
    pub n: usize,
    pub rel_frobenius: f64,
}

/// Relative Frobenius distance between the empirical diffusion matrix at
/// `ᾱ + Δα` (G = I) and `field.d_inf_at_delta(Δα)`, on nested prefixes of one
/// dataset of size `max(ns)`.
pub fn identity1_curve(
    basis: &BasisSet,
    field: &DiffusionField,
    delta: &DVector<f64>,
    input: InputDist,
    ns: &[usize],
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<Identity1Point>)> {
    let k = basis.len();
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let data = generate_dataset(basis, field.alpha_bar.as_slice(), n_max, field.sigma, input, seed)?;
    let d_inf = field.d_inf_at_delta(delta)?;
    let state = ParameterState::new(&field.alpha_bar + delta);
    let identity = DMatrix::identity(k, k);
    let mut curve = Vec::with_capacity(ns.len());
    for &n in ns {
        let lg = loss_and_gradients(&data.prefix(n), basis, &identity, &state)?;
        let d = empirical_diffusion(&lg.per_sample)?;
        curve.push(Identity1Point { n, rel_frobenius: linalg::rel_frobenius(&d, &d_inf) });
    }
    Ok((d_inf, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{estimate_a2, estimate_a4, MomentMode};
    use approx::assert_relative_eq;

    fn exact(basis: &BasisSet) -> (DMatrix<f64>, MomentTensor4) {
        let s = Sampling::new(2, 0);
        let d = InputDist::default();
        (
            estimate_a2(basis, d, &s, MomentMode::Exact).unwrap().a2,
            estimate_a4(basis, d, &s, MomentMode::Exact).unwrap(),
        )
    }

    #[test]
    fn empirical_diffusion_examples() {
        let same = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(empirical_diffusion(&same).unwrap(), DMatrix::zeros(2, 2));
        let toy = DMatrix::identity(2, 2);
        let d = empirical_diffusion(&toy).unwrap();
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]));
        assert!(empirical_diffusion(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn scalar_c_and_d_infinity() {
        let b = BasisSet::monomials(&[1]);
        let (a2, a4) = exact(&b);
        let g = CouplingMatrix::identity(1);
        let one = DVector::from_element(1, 1.0);
        let (c, _) = c_infinity(&a4, &a2, &g, &one).unwrap();
        assert_relative_eq!(c[(0, 0)], 2.0);
        let (d, _) = d_infinity(&a2, &a4, &g, &one, 0.1).unwrap();
        assert_relative_eq!(d[(0, 0)], 8.04, epsilon = 1e-12);
        let (c2, _) = c_infinity(&a4, &a2, &g, &(&one * 2.0)).unwrap();
        assert_relative_eq!(c2[(0, 0)], 8.0);
        let (d0, _) = d_infinity(&a2, &a4, &g, &DVector::zeros(1), 0.1).unwrap();
        assert_eq!(d0[(0, 0)], 4.0 * 0.1 * 0.1 * a2[(0, 0)]);
    }

    #[test]
    fn metric_bounds() {
        let d = DMatrix::from_element(1, 1, 8.04);
        assert!(matches!(diffusion_metric(&d, 0.2), Err(Error::EpsilonOutOfRange { .. })));
        assert!(diffusion_metric(&d, -0.1).is_err());
        assert_eq!(diffusion_metric(&d, 0.0).unwrap(), DMatrix::identity(1, 1));
        assert_relative_eq!(default_epsilon(&d), 0.5 / 8.04);
    }

    #[test]
    fn lemma1_vanishes_at_zero_inputs() {
        let k = 2;
        let id = DMatrix::identity(k, k);
        let y = DVector::from_vec(vec![0.3, -1.2]);
        let d = DVector::from_vec(vec![0.1, 0.2]);
        let z = DVector::zeros(k);
        assert_eq!(lemma1_quadratic_form(&z, &id, &d, &id, &id, &id).unwrap(), 0.0);
        assert_eq!(lemma1_quadratic_form(&y, &id, &z, &id, &id, &id).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_basis_c_is_symmetric_psd() {
        let b = BasisSet::monomials(&[0, 1, 2]);
        let (a2, a4) = exact(&b);
        let d = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let (c, asym) = c_infinity(&a4, &a2, &CouplingMatrix::identity(3), &d).unwrap();
        assert!(asym <= 1e-12 * c.norm());
        assert!(linalg::min_sym_eigenvalue(&c) > -1e-12);
    }
}
