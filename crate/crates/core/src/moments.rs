//! Second- and fourth-order moment tensors of the basis functions under the
//! input law, with Monte Carlo standard errors.
//!
//! Sampling is chunk-parallel. Each chunk keeps Welford statistics for every
//! tracked product; chunks are merged pairwise in a fixed order.

use crate::error::{Error, Result};
use crate::model::{BasisSet, InputDist};
use crate::rng::{self, Domain};
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Default cap on the number of basis functions for moment estimation.
pub const DEFAULT_MAX_K: usize = 8;

/// Anything that yields i.i.d. feature vectors `φ(x)`.
pub trait FeatureSource: Sync {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()>;
}

/// Basis functions of a scalar Gaussian input.
#[derive(Debug, Clone, Copy)]
pub struct BasisFeatures<'a> {
    pub basis: &'a BasisSet,
    pub input: InputDist,
}

impl<'a> BasisFeatures<'a> {
    pub fn new(basis: &'a BasisSet, input: InputDist) -> Self {
        BasisFeatures { basis, input }
    }
}

impl FeatureSource for BasisFeatures<'_> {
    fn dim(&self) -> usize {
        self.basis.len()
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
        let z: f64 = StandardNormal.sample(rng);
        let x = self.input.mean + self.input.variance.sqrt() * z;
        self.basis.eval_into(x, out)
    }
}

/// Mutually independent Gaussian features (not functions of one input).
#[derive(Debug, Clone)]
pub struct IndependentFeatures {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl IndependentFeatures {
    pub fn standard(k: usize) -> Self {
        IndependentFeatures { means: vec![0.0; k], sds: vec![1.0; k] }
    }
}

impl FeatureSource for IndependentFeatures {
    fn dim(&self) -> usize {
        self.means.len()
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
        for ((o, &m), &s) in out.iter_mut().zip(&self.means).zip(&self.sds) {
            *o = Normal::new(m, s).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng);
        }
        Ok(())
    }
}

/// Sample count, seed and dimension cap for Monte Carlo estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub n: usize,
    pub seed: u64,
    pub max_k: usize,
}

impl Sampling {
    pub fn new(n: usize, seed: u64) -> Self {
        Sampling { n, seed, max_k: DEFAULT_MAX_K }
    }

    pub fn max_k(mut self, max_k: usize) -> Self {
        self.max_k = max_k;
        self
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 samples, got {}", self.n)));
        }
        if k > self.max_k {
            return Err(Error::InvalidArgument(format!(
                "basis has {k} functions, above the moment-estimation cap of {}",
                self.max_k
            )));
        }
        Ok(())
    }
}

/// Running mean and sum of squared deviations for a vector of statistics.
#[derive(Debug, Clone)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Welford { n: 0.0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, v: &[f64]) {
        self.n += 1.0;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(v) {
            let d = x - *m;
            *m += d / self.n;
            *s += d * (x - *m);
        }
    }

    // Chan et al. parallel merge.
    fn merge(mut self, other: Welford) -> Welford {
        if other.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * other.n / n;
            self.m2[i] += other.m2[i] + d * d * self.n * other.n / n;
        }
        self.n = n;
        self
    }

    /// Unbiased sample variance.
    fn variance(&self, i: usize) -> f64 {
        if self.n > 1.0 {
            (self.m2[i] / (self.n - 1.0)).max(0.0)
        } else {
            0.0
        }
    }

    fn std_err(&self, i: usize) -> f64 {
        (self.variance(i) / self.n).sqrt()
    }
}

fn sample_welford<S, F>(source: &S, sampling: &Sampling, width: usize, stats: F) -> Result<Welford>
where
    S: FeatureSource + ?Sized,
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let k = source.dim();
    let parts = rng::par_chunks(sampling.n, |c, range| -> Result<Welford> {
        let mut rng = rng::stream(sampling.seed, Domain::Moments, c);
        let mut phi = vec![0.0; k];
        let mut row = vec![0.0; width];
        let mut w = Welford::new(width);
        for _ in range {
            source.draw(&mut rng, &mut phi)?;
            stats(&phi, &mut row);
            w.push(&row);
        }
        Ok(w)
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(rng::tree_reduce(parts, Welford::merge).unwrap_or_else(|| Welford::new(width)))
}

/// Monte Carlo mean and standard error of `f(φ)` on the moment stream of
/// `sampling.seed`, i.e. on the same draws every estimator here uses.
pub fn estimate_expectation<S, F>(source: &S, sampling: &Sampling, f: F) -> Result<(f64, f64)>
where
    S: FeatureSource + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    sampling.validate(source.dim())?;
    let w = sample_welford(source, sampling, 1, |phi, out| out[0] = f(phi))?;
    Ok((w.mean[0], w.std_err(0)))
}

fn upper_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect()
}

/// `A∞_{μν} = ⟨φ_μ φ_ν⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTensor2 {
    pub a2: DMatrix<f64>,
    /// `None` for closed-form moments.
    pub samples: Option<usize>,
    pub std_err: DMatrix<f64>,
}

impl MomentTensor2 {
    pub fn k(&self) -> usize {
        self.a2.nrows()
    }

    pub fn max_std_err(&self) -> f64 {
        self.std_err.iter().copied().fold(0.0, f64::max)
    }

    /// Minimum eigenvalue is at least `-3 × (max standard error)`.
    pub fn is_psd_within_tolerance(&self) -> bool {
        crate::linalg::min_sym_eigenvalue(&self.a2) >= -3.0 * self.max_std_err() - 1e-12
    }

    pub fn from_matrix(a2: DMatrix<f64>) -> Self {
        let k = a2.nrows();
        MomentTensor2 { a2, samples: None, std_err: DMatrix::zeros(k, k) }
    }
}

/// Fully symmetric fourth-moment tensor `A∞_{pηζk} = ⟨φ_p φ_η φ_ζ φ_k⟩`,
/// stored once per sorted index quadruple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTensor4 {
    k: usize,
    /// Sorted index quadruples, in lexicographic order.
    index: Vec<[usize; 4]>,
    values: Vec<f64>,
    std_err: Vec<f64>,
    pub samples: Option<usize>,
    #[serde(skip)]
    lookup: Vec<usize>,
}

impl MomentTensor4 {
    fn canonical_index(k: usize) -> Vec<[usize; 4]> {
        let mut out = Vec::new();
        for a in 0..k {
            for b in a..k {
                for c in b..k {
                    for d in c..k {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
        out
    }

    fn build_lookup(k: usize, index: &[[usize; 4]]) -> Vec<usize> {
        let mut lookup = vec![0; k.pow(4)];
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    for d in 0..k {
                        let mut key = [a, b, c, d];
                        key.sort_unstable();
                        let pos = index.binary_search(&key).expect("canonical index is complete");
                        lookup[((a * k + b) * k + c) * k + d] = pos;
                    }
                }
            }
        }
        lookup
    }

    fn from_parts(k: usize, values: Vec<f64>, std_err: Vec<f64>, samples: Option<usize>) -> Self {
        let index = Self::canonical_index(k);
        let lookup = Self::build_lookup(k, &index);
        MomentTensor4 { k, index, values, std_err, samples, lookup }
    }

    /// Builds the tensor from a function of sorted index quadruples.
    pub fn from_fn(k: usize, f: impl Fn([usize; 4]) -> f64) -> Self {
        let index = Self::canonical_index(k);
        let values = index.iter().map(|&q| f(q)).collect();
        let n = index.len();
        Self::from_parts(k, values, vec![0.0; n], None)
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.lookup = Self::build_lookup(self.k, &self.index);
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of stored entries, `K(K+1)(K+2)(K+3)/24`.
    pub fn stored_len(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let k = self.k;
        self.values[self.lookup[((a * k + b) * k + c) * k + d]]
    }

    pub fn std_err_at(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let k = self.k;
        self.std_err[self.lookup[((a * k + b) * k + c) * k + d]]
    }

    pub fn max_std_err(&self) -> f64 {
        self.std_err.iter().copied().fold(0.0, f64::max)
    }

    pub fn entries(&self) -> impl Iterator<Item = ([usize; 4], f64, f64)> + '_ {
        self.index.iter().zip(&self.values).zip(&self.std_err).map(|((&i, &v), &s)| (i, v, s))
    }
}

/// `F_{μμ} = var φ_μ` (diagonal) and `Y_{μν} = var(φ_μ φ_ν)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceMatrices {
    pub f: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub samples: usize,
}

/// Monte Carlo estimate of `A∞` with per-entry standard errors.
pub fn sample_a2<S: FeatureSource + ?Sized>(source: &S, sampling: &Sampling) -> Result<MomentTensor2> {
    let k = source.dim();
    sampling.validate(k)?;
    let pairs = upper_pairs(k);
    let w = sample_welford(source, sampling, pairs.len(), |phi, out| {
        for (o, &(i, j)) in out.iter_mut().zip(&pairs) {
            *o = phi[i] * phi[j];
        }
    })?;
    let mut a2 = DMatrix::zeros(k, k);
    let mut se = DMatrix::zeros(k, k);
    for (t, &(i, j)) in pairs.iter().enumerate() {
        a2[(i, j)] = w.mean[t];
        a2[(j, i)] = w.mean[t];
        se[(i, j)] = w.std_err(t);
        se[(j, i)] = w.std_err(t);
    }
    Ok(MomentTensor2 { a2, samples: Some(sampling.n), std_err: se })
}

/// Monte Carlo estimate of the fourth-moment tensor.
pub fn sample_a4<S: FeatureSource + ?Sized>(source: &S, sampling: &Sampling) -> Result<MomentTensor4> {
    let k = source.dim();
    sampling.validate(k)?;
    let index = MomentTensor4::canonical_index(k);
    let w = sample_welford(source, sampling, index.len(), |phi, out| {
        for (o, q) in out.iter_mut().zip(&index) {
            *o = phi[q[0]] * phi[q[1]] * phi[q[2]] * phi[q[3]];
        }
    })?;
    let se = (0..index.len()).map(|i| w.std_err(i)).collect();
    Ok(MomentTensor4::from_parts(k, w.mean, se, Some(sampling.n)))
}

/// `F` and `Y` from one pass over the moment stream.
pub fn sample_variance_matrices<S: FeatureSource + ?Sized>(
    source: &S,
    sampling: &Sampling,
) -> Result<VarianceMatrices> {
    let k = source.dim();
    sampling.validate(k)?;
    let pairs = upper_pairs(k);
    let w = sample_welford(source, sampling, k + pairs.len(), |phi, out| {
        out[..k].copy_from_slice(phi);
        for (o, &(i, j)) in out[k..].iter_mut().zip(&pairs) {
            *o = phi[i] * phi[j];
        }
    })?;
    let f = DMatrix::from_fn(k, k, |i, j| if i == j { w.variance(i) } else { 0.0 });
    let mut y = DMatrix::zeros(k, k);
    for (t, &(i, j)) in pairs.iter().enumerate() {
        y[(i, j)] = w.variance(k + t);
        y[(j, i)] = w.variance(k + t);
    }
    Ok(VarianceMatrices { f, y, samples: sampling.n })
}

/// Closed-form or sampled moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMode {
    Sampled,
    Exact,
}

fn no_exact(basis: &BasisSet) -> Error {
    Error::InvalidArgument(format!("no closed-form moments for {} bases", basis.spec().kind_name()))
}

/// `A∞` for a basis under a Gaussian input, sampled or exact.
pub fn estimate_a2(basis: &BasisSet, input: InputDist, sampling: &Sampling, mode: MomentMode) -> Result<MomentTensor2> {
    match mode {
        MomentMode::Sampled => sample_a2(&BasisFeatures::new(basis, input), sampling),
        MomentMode::Exact => {
            if !basis.has_exact_moments() {
                return Err(no_exact(basis));
            }
            let k = basis.len();
            let a2 = DMatrix::from_fn(k, k, |i, j| basis.exact_moment(&input, &[i, j]).unwrap_or(f64::NAN));
            Ok(MomentTensor2::from_matrix(a2))
        }
    }
}

pub fn estimate_a4(basis: &BasisSet, input: InputDist, sampling: &Sampling, mode: MomentMode) -> Result<MomentTensor4> {
    match mode {
        MomentMode::Sampled => sample_a4(&BasisFeatures::new(basis, input), sampling),
        MomentMode::Exact => {
            if !basis.has_exact_moments() {
                return Err(no_exact(basis));
            }
            Ok(MomentTensor4::from_fn(basis.len(), |q| basis.exact_moment(&input, &q).unwrap_or(f64::NAN)))
        }
    }
}

pub fn variance_matrices(basis: &BasisSet, input: InputDist, sampling: &Sampling) -> Result<VarianceMatrices> {
    sample_variance_matrices(&BasisFeatures::new(basis, input), sampling)
}

/// Closed-form `F` and `Y` for monomial bases.
pub fn exact_variance_matrices(basis: &BasisSet, input: InputDist) -> Result<VarianceMatrices> {
    if !basis.has_exact_moments() {
        return Err(no_exact(basis));
    }
    let k = basis.len();
    let m = |idx: &[usize]| basis.exact_moment(&input, idx).unwrap_or(f64::NAN);
    let f = DMatrix::from_fn(k, k, |i, j| if i == j { m(&[i, i]) - m(&[i]).powi(2) } else { 0.0 });
    let y = DMatrix::from_fn(k, k, |i, j| m(&[i, i, j, j]) - m(&[i, j]).powi(2));
    Ok(VarianceMatrices { f, y, samples: 0 })
}

/// JSON dump of moment tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorDump {
    pub k: usize,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub a2: A2Dump,
    pub a4: A4Dump,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A2Dump {
    pub shape: [usize; 2],
    pub values: Vec<Vec<f64>>,
    pub std_err: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A4Dump {
    pub shape: [usize; 4],
    pub canonical: Vec<A4Entry>,
    pub max_std_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A4Entry {
    pub index: [usize; 4],
    pub value: f64,
    pub std_err: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl TensorDump {
    pub fn new(a2: &MomentTensor2, a4: &MomentTensor4, seed: Option<u64>) -> Self {
        let k = a2.k();
        TensorDump {
            k,
            samples: a2.samples,
            seed,
            a2: A2Dump { shape: [k, k], values: rows(&a2.a2), std_err: rows(&a2.std_err) },
            a4: A4Dump {
                shape: [k; 4],
                canonical: a4.entries().map(|(index, value, std_err)| A4Entry { index, value, std_err }).collect(),
                max_std_err: a4.max_std_err(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_quadratic_basis_moments() {
        let b = BasisSet::monomials(&[0, 1, 2]);
        let a2 = estimate_a2(&b, InputDist::default(), &Sampling::new(2, 0), MomentMode::Exact).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 3.0]);
        assert_eq!(a2.a2, want);
        assert_eq!(a2.max_std_err(), 0.0);
    }

    #[test]
    fn constant_basis_has_zero_error() {
        let b = BasisSet::monomials(&[0]);
        let s = Sampling::new(5000, 1);
        let a2 = estimate_a2(&b, InputDist::default(), &s, MomentMode::Sampled).unwrap();
        assert_eq!(a2.a2[(0, 0)], 1.0);
        assert_eq!(a2.std_err[(0, 0)], 0.0);
        let a4 = estimate_a4(&b, InputDist::default(), &s, MomentMode::Sampled).unwrap();
        assert_eq!(a4.get(0, 0, 0, 0), 1.0);
        let v = variance_matrices(&b, InputDist::default(), &s).unwrap();
        assert_eq!(v.f[(0, 0)], 0.0);
        assert_eq!(v.y[(0, 0)], 0.0);
    }

    #[test]
    fn canonical_storage_size_and_symmetry() {
        let b = BasisSet::monomials(&[0, 1, 2, 3]);
        let a4 = estimate_a4(&b, InputDist::default(), &Sampling::new(1000, 5), MomentMode::Sampled).unwrap();
        assert_eq!(a4.stored_len(), 4 * 5 * 6 * 7 / 24);
        assert_eq!(a4.get(0, 1, 2, 3), a4.get(3, 2, 1, 0));
        assert_eq!(a4.get(1, 1, 3, 0), a4.get(0, 3, 1, 1));
    }

    #[test]
    fn rejects_too_few_samples_and_oversized_basis() {
        let b = BasisSet::monomials(&[1]);
        assert!(estimate_a2(&b, InputDist::default(), &Sampling::new(1, 0), MomentMode::Sampled).is_err());
        let big = BasisSet::monomials(&[0, 1, 2]);
        let s = Sampling::new(10, 0).max_k(2);
        assert!(estimate_a4(&big, InputDist::default(), &s, MomentMode::Sampled).is_err());
        let f = BasisSet::new(crate::model::BasisSpec::Fourier { len: 2 }).unwrap();
        assert!(estimate_a2(&f, InputDist::default(), &s, MomentMode::Exact).is_err());
    }

    #[test]
    fn exact_variance_matrices_for_x() {
        let b = BasisSet::monomials(&[1]);
        let v = exact_variance_matrices(&b, InputDist::default()).unwrap();
        assert_relative_eq!(v.f[(0, 0)], 1.0);
        assert_relative_eq!(v.y[(0, 0)], 2.0);
    }

    #[test]
    fn welford_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        let mut all = Welford::new(1);
        xs.iter().for_each(|&x| all.push(&[x]));
        let mut a = Welford::new(1);
        let mut b = Welford::new(1);
        xs[..37].iter().for_each(|&x| a.push(&[x]));
        xs[37..].iter().for_each(|&x| b.push(&[x]));
        let m = a.merge(b);
        assert_relative_eq!(m.mean[0], all.mean[0], epsilon = 1e-12);
        assert_relative_eq!(m.variance(0), all.variance(0), epsilon = 1e-12);
    }
}
