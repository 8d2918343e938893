//! Basis-function regression model `c(α; x) = Σ_μ α^μ φ_μ(x)`, synthetic
//! data, and the squared-error loss with per-sample gradients.

use crate::error::{check_len, Error, Result};
use crate::rng::{self, Domain};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Which family a basis belongs to, with the data needed to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisSpec {
    /// `φ_μ(x) = x^{powers[μ]}`.
    Monomial { powers: Vec<u32> },
    /// `1, sin x, cos x, sin 2x, cos 2x, …`, truncated to `len` functions.
    Fourier { len: usize },
    /// Piecewise-linear interpolation of tabulated values on shared knots,
    /// held constant outside the knot range.
    CustomTable { knots: Vec<f64>, values: Vec<Vec<f64>> },
}

impl BasisSpec {
    pub fn monomials(powers: &[u32]) -> Self {
        BasisSpec::Monomial { powers: powers.to_vec() }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            BasisSpec::Monomial { .. } => "monomial",
            BasisSpec::Fourier { .. } => "fourier",
            BasisSpec::CustomTable { .. } => "custom-table",
        }
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::Monomial { powers } => {
                let terms: Vec<String> = powers
                    .iter()
                    .map(|&p| match p {
                        0 => "1".to_string(),
                        1 => "x".to_string(),
                        p => format!("x^{p}"),
                    })
                    .collect();
                write!(f, "{}", terms.join(","))
            }
            BasisSpec::Fourier { len } => write!(f, "fourier:{len}"),
            BasisSpec::CustomTable { values, .. } => write!(f, "table:{}", values.len()),
        }
    }
}

/// Parses `"1,x,x^2"` (monomials) or `"fourier:5"`. Tables come from JSON.
impl FromStr for BasisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(len) = s.strip_prefix("fourier:") {
            let len = len.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad fourier length in {s:?}")))?;
            return Ok(BasisSpec::Fourier { len });
        }
        let powers = s
            .trim_start_matches('(')
            .trim_end_matches(')')
            .split(',')
            .map(|t| {
                let t = t.trim();
                match t {
                    "1" => Ok(0),
                    "x" => Ok(1),
                    _ => t
                        .strip_prefix("x^")
                        .or_else(|| t.strip_prefix("x²").map(|_| "2"))
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown basis term {t:?}"))),
                }
            })
            .collect::<Result<Vec<u32>>>()?;
        Ok(BasisSpec::Monomial { powers })
    }
}

/// Gaussian law of the scalar input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputDist {
    pub mean: f64,
    pub variance: f64,
}

impl Default for InputDist {
    fn default() -> Self {
        InputDist { mean: 0.0, variance: 1.0 }
    }
}

impl InputDist {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "input distribution needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(InputDist { mean, variance })
    }

    /// Raw moment `E[x^n]` of `N(mean, variance)`.
    pub fn raw_moment(&self, n: u32) -> f64 {
        // E[(m + s z)^n] = Σ_k C(n,k) m^{n-k} s^k E[z^k], E[z^k] = (k-1)!! for even k.
        let s = self.variance.sqrt();
        let mut total = 0.0;
        let mut binom = 1.0;
        for k in 0..=n {
            if k > 0 {
                binom = binom * f64::from(n - k + 1) / f64::from(k);
            }
            if k % 2 == 0 {
                let dfact: f64 = (1..k).step_by(2).map(f64::from).product();
                total += binom * self.mean.powi((n - k) as i32) * s.powi(k as i32) * dfact;
            }
        }
        total
    }
}

/// An ordered set of `K ≥ 1` scalar basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    spec: BasisSpec,
}

impl BasisSet {
    pub fn new(spec: BasisSpec) -> Result<Self> {
        let k = match &spec {
            BasisSpec::Monomial { powers } => powers.len(),
            BasisSpec::Fourier { len } => *len,
            BasisSpec::CustomTable { knots, values } => {
                if knots.len() < 2 || knots.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::InvalidArgument(
                        "table knots must be strictly increasing with at least two entries".into(),
                    ));
                }
                if let Some(bad) = values.iter().position(|v| v.len() != knots.len()) {
                    return Err(Error::Dimension {
                        what: "table basis values",
                        expected: knots.len(),
                        got: values[bad].len(),
                    });
                }
                values.len()
            }
        };
        if k == 0 {
            return Err(Error::InvalidArgument("basis needs at least one function".into()));
        }
        Ok(BasisSet { spec })
    }

    pub fn monomials(powers: &[u32]) -> Self {
        BasisSet::new(BasisSpec::monomials(powers)).expect("non-empty monomial basis")
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        match &self.spec {
            BasisSpec::Monomial { powers } => powers.len(),
            BasisSpec::Fourier { len } => *len,
            BasisSpec::CustomTable { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn raw(&self, mu: usize, x: f64) -> f64 {
        match &self.spec {
            BasisSpec::Monomial { powers } => x.powi(powers[mu] as i32),
            BasisSpec::Fourier { .. } => {
                if mu == 0 {
                    1.0
                } else {
                    let freq = mu.div_ceil(2) as f64;
                    if mu % 2 == 1 {
                        (freq * x).sin()
                    } else {
                        (freq * x).cos()
                    }
                }
            }
            BasisSpec::CustomTable { knots, values } => {
                let v = &values[mu];
                if x <= knots[0] {
                    return v[0];
                }
                let last = knots.len() - 1;
                if x >= knots[last] {
                    return v[last];
                }
                let j = knots.partition_point(|&k| k <= x) - 1;
                let w = (x - knots[j]) / (knots[j + 1] - knots[j]);
                v[j] + w * (v[j + 1] - v[j])
            }
        }
    }

    /// `φ_μ(x)`, checked for finiteness.
    pub fn phi(&self, mu: usize, x: f64) -> Result<f64> {
        let v = self.raw(mu, x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteBasis { index: mu, x })
        }
    }

    /// Writes `φ(x)` into `out` (length K).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        for (mu, o) in out.iter_mut().enumerate() {
            *o = self.phi(mu, x)?;
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Exact `E[Π_j φ_{idx[j]}(x)]` under `dist`, when a closed form exists
    /// (monomial bases).
    pub fn exact_moment(&self, dist: &InputDist, idx: &[usize]) -> Option<f64> {
        match &self.spec {
            BasisSpec::Monomial { powers } => Some(dist.raw_moment(idx.iter().map(|&i| powers[i]).sum())),
            _ => None,
        }
    }

    pub fn has_exact_moments(&self) -> bool {
        matches!(self.spec, BasisSpec::Monomial { .. })
    }
}

/// Coefficients `α` and, optionally, the reference optimum `ᾱ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub alpha: DVector<f64>,
    pub alpha_bar: Option<DVector<f64>>,
}

impl ParameterState {
    pub fn new(alpha: DVector<f64>) -> Self {
        ParameterState { alpha, alpha_bar: None }
    }

    pub fn with_optimum(alpha: DVector<f64>, alpha_bar: DVector<f64>) -> Result<Self> {
        check_len("alpha_bar", alpha.len(), alpha_bar.len())?;
        Ok(ParameterState { alpha, alpha_bar: Some(alpha_bar) })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `α - ᾱ`, if the optimum is known.
    pub fn delta(&self) -> Option<DVector<f64>> {
        self.alpha_bar.as_ref().map(|b| &self.alpha - b)
    }
}

/// `Σ_μ α^μ φ_μ(x)`.
pub fn evaluate_model(basis: &BasisSet, alpha: &ParameterState, x: f64) -> Result<f64> {
    check_len("alpha", basis.len(), alpha.len())?;
    eval_linear(basis, alpha.alpha.as_slice(), x)
}

pub(crate) fn eval_linear(basis: &BasisSet, alpha: &[f64], x: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (mu, a) in alpha.iter().enumerate() {
        acc += a * basis.phi(mu, x)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub sigma: f64,
    pub input: InputDist,
    pub alpha_bar: Vec<f64>,
    pub k: usize,
    pub basis_kind: String,
    pub basis: BasisSpec,
}

/// Inputs `x_i` and noisy targets `ŷ_i = c(ᾱ; x_i) + η_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub noise_sigma: f64,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// The first `n` samples. Because generation is chunk-streamed, this is
    /// identical to generating `n` samples with the same seed.
    pub fn prefix(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            x: self.x[..n].to_vec(),
            y_hat: self.y_hat[..n].to_vec(),
            noise_sigma: self.noise_sigma,
            meta: self.meta.clone(),
        }
    }

    /// Writes `<stem>.csv` (header `x,y_hat`) and `<stem>.json` metadata.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(["x", "y_hat"])?;
        for (x, y) in self.x.iter().zip(&self.y_hat) {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(dir.join(format!("{stem}.json")), meta)?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Dataset> {
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let mut r = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
        let mut x = Vec::new();
        let mut y_hat = Vec::new();
        for rec in r.deserialize() {
            let (xi, yi): (f64, f64) = rec?;
            x.push(xi);
            y_hat.push(yi);
        }
        if x.is_empty() {
            return Err(Error::InvalidArgument("dataset file has no rows".into()));
        }
        Ok(Dataset { x, y_hat, noise_sigma: meta.sigma, meta })
    }
}

/// Draws `n` inputs from `input` and targets with Gaussian noise of standard
/// deviation `sigma`. Inputs and noise use separate streams, so `sigma = 0`
/// reproduces the same inputs as any other `sigma`.
pub fn generate_dataset(
    basis: &BasisSet,
    alpha_bar: &[f64],
    n: usize,
    sigma: f64,
    input: InputDist,
    seed: u64,
) -> Result<Dataset> {
    check_len("alpha_bar", basis.len(), alpha_bar.len())?;
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    let input = InputDist::new(input.mean, input.variance)?;
    let sd = input.variance.sqrt();
    let chunks = rng::par_chunks(n, |c, range| -> Result<Vec<(f64, f64)>> {
        let mut rx = rng::stream(seed, Domain::Inputs, c);
        let mut rn = rng::stream(seed, Domain::Noise, c);
        range
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rx);
                let e: f64 = StandardNormal.sample(&mut rn);
                let x = input.mean + sd * z;
                Ok((x, eval_linear(basis, alpha_bar, x)? + sigma * e))
            })
            .collect()
    });
    let mut x = Vec::with_capacity(n);
    let mut y_hat = Vec::with_capacity(n);
    for chunk in chunks {
        for (xi, yi) in chunk? {
            x.push(xi);
            y_hat.push(yi);
        }
    }
    Ok(Dataset {
        x,
        y_hat,
        noise_sigma: sigma,
        meta: DatasetMeta {
            seed,
            sigma,
            input,
            alpha_bar: alpha_bar.to_vec(),
            k: basis.len(),
            basis_kind: basis.spec().kind_name().to_string(),
            basis: basis.spec().clone(),
        },
    })
}

#[derive(Debug, Clone)]
pub struct LossGradients {
    /// Mean squared error.
    pub loss: f64,
    /// Row `i` is `∂f_i/∂α` with `f_i = (ŷ_i − c(α; x_i))²`.
    pub per_sample: DMatrix<f64>,
    pub mean_grad: DVector<f64>,
}

/// Loss and gradients, with `∂c/∂α^μ = Σ_η G_{ημ} φ_η(x)` for coupling `G`.
pub fn loss_and_gradients(
    data: &Dataset,
    basis: &BasisSet,
    coupling: &DMatrix<f64>,
    alpha: &ParameterState,
) -> Result<LossGradients> {
    let k = basis.len();
    check_len("alpha", k, alpha.len())?;
    check_len("coupling rows", k, coupling.nrows())?;
    check_len("coupling cols", k, coupling.ncols())?;
    let n = data.len();
    let gt = coupling.transpose();
    let identity = coupling == &DMatrix::identity(k, k);
    let mut per_sample = DMatrix::zeros(n, k);
    let mut phi = DVector::zeros(k);
    let mut loss = 0.0;
    for i in 0..n {
        basis.eval_into(data.x[i], phi.as_mut_slice())?;
        let r = data.y_hat[i] - alpha.alpha.dot(&phi);
        let dc = if identity { phi.clone() } else { &gt * &phi };
        for mu in 0..k {
            per_sample[(i, mu)] = -2.0 * r * dc[mu];
        }
        loss += r * r;
        if !r.is_finite() {
            return Err(Error::NonFiniteSample { sample: i });
        }
    }
    let mean_grad = per_sample.row_mean().transpose();
    Ok(LossGradients { loss: loss / n as f64, per_sample, mean_grad })
}

/// Mean squared error only.
pub fn loss(data: &Dataset, basis: &BasisSet, alpha: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for (i, (&x, &y)) in data.x.iter().zip(&data.y_hat).enumerate() {
        let r = y - eval_linear(basis, alpha, x)?;
        if !r.is_finite() {
            return Err(Error::NonFiniteSample { sample: i });
        }
        acc += r * r;
    }
    Ok(acc / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad() -> BasisSet {
        BasisSet::monomials(&[0, 1, 2])
    }

    #[test]
    fn evaluates_polynomial() {
        let a = ParameterState::new(DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(evaluate_model(&quad(), &a, 2.0).unwrap(), 17.0);
        let z = ParameterState::new(DVector::zeros(3));
        assert_eq!(evaluate_model(&quad(), &z, -3.7).unwrap(), 0.0);
        let id = BasisSet::monomials(&[1]);
        let a = ParameterState::new(DVector::from_vec(vec![1.0]));
        assert_eq!(evaluate_model(&id, &a, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn non_finite_basis_names_index() {
        let b = BasisSet::monomials(&[0, 3]);
        match b.phi(1, f64::INFINITY) {
            Err(Error::NonFiniteBasis { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn basis_parsing() {
        assert_eq!("1,x,x^2".parse::<BasisSpec>().unwrap(), BasisSpec::monomials(&[0, 1, 2]));
        assert_eq!("(x)".parse::<BasisSpec>().unwrap(), BasisSpec::monomials(&[1]));
        assert_eq!("fourier:3".parse::<BasisSpec>().unwrap(), BasisSpec::Fourier { len: 3 });
        assert!("1,y".parse::<BasisSpec>().is_err());
        assert_eq!(BasisSpec::monomials(&[0, 1, 3]).to_string(), "1,x,x^3");
    }

    #[test]
    fn fourier_and_table_bases() {
        let f = BasisSet::new(BasisSpec::Fourier { len: 3 }).unwrap();
        let v = f.eval(0.3).unwrap();
        assert_eq!(v, vec![1.0, 0.3f64.sin(), 0.3f64.cos()]);
        let t = BasisSet::new(BasisSpec::CustomTable { knots: vec![0.0, 1.0, 2.0], values: vec![vec![0.0, 2.0, 2.0]] })
            .unwrap();
        assert_eq!(t.phi(0, 0.25).unwrap(), 0.5);
        assert_eq!(t.phi(0, -5.0).unwrap(), 0.0);
        assert_eq!(t.phi(0, 9.0).unwrap(), 2.0);
        assert!(BasisSet::new(BasisSpec::CustomTable { knots: vec![1.0, 0.0], values: vec![vec![0.0, 0.0]] }).is_err());
        assert!(BasisSet::new(BasisSpec::Monomial { powers: vec![] }).is_err());
    }

    #[test]
    fn gaussian_raw_moments() {
        let std = InputDist::default();
        let expect = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0, 0.0, 105.0];
        for (n, e) in expect.iter().enumerate() {
            assert_relative_eq!(std.raw_moment(n as u32), *e, epsilon = 1e-12);
        }
        // N(1, 4): E[x^2] = 5, E[x^3] = m^3 + 3 m s^2 = 13.
        let d = InputDist::new(1.0, 4.0).unwrap();
        assert_relative_eq!(d.raw_moment(2), 5.0, epsilon = 1e-12);
        assert_relative_eq!(d.raw_moment(3), 13.0, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_targets_are_exact() {
        let ab = [0.5, -1.0, 0.25];
        let d = generate_dataset(&quad(), &ab, 1000, 0.0, InputDist::default(), 3).unwrap();
        for (x, y) in d.x.iter().zip(&d.y_hat) {
            assert_eq!(*y, eval_linear(&quad(), &ab, *x).unwrap());
        }
    }

    #[test]
    fn same_seed_same_bytes_and_nested_prefix() {
        let b = quad();
        let ab = [0.5, -1.0, 0.25];
        let d1 = generate_dataset(&b, &ab, 40_000, 0.1, InputDist::default(), 42).unwrap();
        let d2 = generate_dataset(&b, &ab, 40_000, 0.1, InputDist::default(), 42).unwrap();
        let bits = |d: &Dataset| d.x.iter().chain(&d.y_hat).map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&d1), bits(&d2));
        let small = generate_dataset(&b, &ab, 20_001, 0.1, InputDist::default(), 42).unwrap();
        assert_eq!(bits(&small), bits(&d1.prefix(20_001)));
        let other = generate_dataset(&b, &ab, 10, 0.1, InputDist::default(), 43).unwrap();
        assert_ne!(other.x[0], d1.x[0]);
    }

    #[test]
    fn exact_fit_has_zero_loss_and_gradient() {
        let ab = [0.5, -1.0, 0.25];
        let d = generate_dataset(&quad(), &ab, 500, 0.0, InputDist::default(), 1).unwrap();
        let st = ParameterState::new(DVector::from_row_slice(&ab));
        let lg = loss_and_gradients(&d, &quad(), &DMatrix::identity(3, 3), &st).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.per_sample.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dataset_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_dataset(&quad(), &[1.0, 0.0, 2.0], 50, 0.3, InputDist::new(0.5, 2.0).unwrap(), 9).unwrap();
        d.write(dir.path(), "data").unwrap();
        let back = Dataset::read(dir.path(), "data").unwrap();
        assert_eq!(back, d);
    }
}
