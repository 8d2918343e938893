use super::sgd::{sgd_run, SgdCoupling, SgdOptions};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::model::{generate_dataset, BasisSet, InputDist};
use crate::moments::{estimate_a2, MomentMode, Sampling};
use crate::rng::{self, Domain};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Exact covariance `(2βA)⁻¹` of the density `∝ exp(−β ΔαᵀAΔα)`.
pub fn gibbs_covariance(a2: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    let chol = linalg::cholesky(&(a2 * (2.0 * beta)), "2βA")?;
    Ok(chol.inverse())
}

/// Sample covariance of `n` direct draws from `N(0, (2βA)⁻¹)`.
pub fn gibbs_sample_covariance(a2: &DMatrix<f64>, beta: f64, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let k = a2.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 Gibbs samples".into()));
    }
    let chol = linalg::cholesky(&(a2 * (2.0 * beta)), "2βA")?;
    let lt = chol.l().transpose();
    let mut rng = rng::stream(seed, Domain::Gibbs, 0);
    let mut acc = CovAcc::new(k);
    let mut z = DVector::zeros(k);
    for _ in 0..n {
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        let d = lt.solve_upper_triangular(&z).ok_or(Error::Singular("2βA"))?;
        acc.push(d.as_slice());
    }
    Ok(acc.covariance())
}

/// Streaming mean and covariance.
#[derive(Debug, Clone)]
struct CovAcc {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl CovAcc {
    fn new(k: usize) -> Self {
        CovAcc { n: 0.0, mean: DVector::zeros(k), m2: DMatrix::zeros(k, k) }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        let k = self.mean.len();
        let before: Vec<f64> = (0..k).map(|i| x[i] - self.mean[i]).collect();
        for i in 0..k {
            self.mean[i] += before[i] / self.n;
        }
        for i in 0..k {
            for j in 0..k {
                self.m2[(i, j)] += before[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn covariance(&self) -> DMatrix<f64> {
        let mut c = &self.m2 / (self.n - 1.0).max(1.0);
        linalg::symmetrize(&mut c);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryConfig {
    pub basis: BasisSet,
    pub sigma: f64,
    pub alpha_bar: Vec<f64>,
    pub input: InputDist,
    pub n_data: usize,
    pub etas: Vec<f64>,
    pub batches: Vec<usize>,
    /// SGD updates per grid point.
    pub steps: usize,
    /// Updates discarded before the covariance is measured.
    pub burn_in: usize,
    pub gibbs_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub eta: f64,
    pub batch: usize,
    pub beta: f64,
    /// `None` when the run diverged; the point is then excluded from fits.
    pub diverged: Option<String>,
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub det: f64,
    /// `β Σ_α A∞`.
    pub beta_sigma_a: DMatrix<f64>,
    /// Largest off-diagonal magnitude of `βΣA` over the mean diagonal.
    pub off_diagonal_ratio: f64,
    pub gibbs_covariance: DMatrix<f64>,
    pub gibbs_exact: DMatrix<f64>,
    /// `‖Σ − Σ_gibbs‖_F / ‖Σ_gibbs‖_F` against the sampled oracle.
    pub rel_to_gibbs: f64,
    /// Relative Frobenius difference of the third- and fourth-quarter
    /// covariances.
    pub quarter_rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryVarianceReport {
    pub k: usize,
    pub a2: DMatrix<f64>,
    pub points: Vec<StationaryPoint>,
    /// `c` minimizing `Σ ‖βΣA − cI‖_F²` over the non-divergent points.
    pub fitted_c: f64,
    /// The constant predicted by the oracle density, `1/2`.
    pub gibbs_c: f64,
    /// The constant stated with the closed-form determinant, `1`.
    pub predicted_c: f64,
    /// Largest `‖βΣA − cI‖₂ / c` over the grid.
    pub isotropy_distance: f64,
    /// Least-squares slope of `log det Σ_α` against `log β`.
    pub slope: f64,
    pub gibbs_slope: f64,
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn op_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Runs SGD from `ᾱ` at every `(η, b)` pair, measures the post-burn-in
/// covariance and compares it with the Gibbs oracle at `β = 2b/η`.
pub fn stationary_variance_experiment(cfg: &StationaryConfig) -> Result<StationaryVarianceReport> {
    let k = cfg.basis.len();
    check_len("alpha_bar", k, cfg.alpha_bar.len())?;
    if cfg.burn_in >= cfg.steps {
        return Err(Error::InvalidArgument(format!(
            "burn-in {} must be below the step count {}",
            cfg.burn_in, cfg.steps
        )));
    }
    if cfg.steps - cfg.burn_in < 8 {
        return Err(Error::TooShort { got: cfg.steps - cfg.burn_in, need: 8 });
    }
    let mode = if cfg.basis.has_exact_moments() { MomentMode::Exact } else { MomentMode::Sampled };
    let sampling = Sampling::new(1_000_000, rng::derive_seed(cfg.seed, 0xA2)).max_k(usize::MAX);
    let a2 = estimate_a2(&cfg.basis, cfg.input, &sampling, mode)?.a2;
    let lmax = linalg::max_sym_eigenvalue(&a2);
    if let Some(&eta) = cfg.etas.iter().find(|&&eta| !(eta > 0.0 && eta < 1.0 / (2.0 * lmax))) {
        return Err(Error::InvalidArgument(format!(
            "eta = {eta} violates linear stability eta < 1/lambda_max(2A) = {}",
            1.0 / (2.0 * lmax)
        )));
    }
    let data = generate_dataset(&cfg.basis, &cfg.alpha_bar, cfg.n_data, cfg.sigma, cfg.input, cfg.seed)?;
    let grid: Vec<(f64, usize)> = cfg.etas.iter().flat_map(|&e| cfg.batches.iter().map(move |&b| (e, b))).collect();

    let points = grid
        .par_iter()
        .enumerate()
        .map(|(idx, &(eta, batch))| -> Result<StationaryPoint> {
            let beta = 2.0 * batch as f64 / eta;
            let point_seed = rng::derive_seed(cfg.seed, idx as u64 + 1);
            let opts = SgdOptions::new(eta, batch, cfg.steps, point_seed);
            let mut all = CovAcc::new(k);
            let mut q3 = CovAcc::new(k);
            let mut q4 = CovAcc::new(k);
            let (q3_start, q4_start) = (cfg.steps / 2, 3 * cfg.steps / 4);
            let run = sgd_run(&data, &cfg.basis, &SgdCoupling::Identity, &cfg.alpha_bar, &opts, |s, a, _| {
                if s >= cfg.burn_in {
                    all.push(a);
                }
                if s >= q4_start {
                    q4.push(a);
                } else if s >= q3_start {
                    q3.push(a);
                }
            });
            let gibbs_exact = gibbs_covariance(&a2, beta)?;
            let gibbs = gibbs_sample_covariance(&a2, beta, cfg.gibbs_samples, point_seed)?;
            let diverged = match run {
                Ok(_) => None,
                Err(e @ Error::Diverged { .. }) => Some(e.to_string()),
                Err(e) => return Err(e),
            };
            let cov = all.covariance();
            let bsa = &cov * &a2 * beta;
            let diag_mean = bsa.diagonal().mean();
            let mut off = 0.0f64;
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        off = off.max(bsa[(i, j)].abs());
                    }
                }
            }
            Ok(StationaryPoint {
                eta,
                batch,
                beta,
                mean: all.mean.iter().copied().collect(),
                det: cov.determinant(),
                off_diagonal_ratio: off / diag_mean.abs(),
                rel_to_gibbs: linalg::rel_frobenius(&cov, &gibbs),
                quarter_rel_diff: linalg::rel_frobenius(&q4.covariance(), &q3.covariance()),
                beta_sigma_a: bsa,
                covariance: cov,
                gibbs_covariance: gibbs,
                gibbs_exact,
                diverged,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ok: Vec<&StationaryPoint> = points.iter().filter(|p| p.diverged.is_none()).collect();
    let kf = k as f64;
    let fitted_c = ok.iter().map(|p| p.beta_sigma_a.trace()).sum::<f64>() / (kf * ok.len().max(1) as f64);
    let id = DMatrix::identity(k, k);
    let isotropy_distance =
        ok.iter().map(|p| op_norm(&(&p.beta_sigma_a - &id * fitted_c)) / fitted_c).fold(0.0, f64::max);
    let log_beta: Vec<f64> = ok.iter().map(|p| p.beta.ln()).collect();
    let log_det: Vec<f64> = ok.iter().map(|p| p.det.ln()).collect();
    let log_det_gibbs: Vec<f64> = ok.iter().map(|p| p.gibbs_covariance.determinant().ln()).collect();
    let (slope_m, slope_g) = if ok.len() >= 2 {
        (slope(&log_beta, &log_det), slope(&log_beta, &log_det_gibbs))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(StationaryVarianceReport {
        k,
        a2,
        points,
        fitted_c,
        gibbs_c: 0.5,
        predicted_c: 1.0,
        isotropy_distance,
        slope: slope_m,
        gibbs_slope: slope_g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gibbs_oracle_scalar() {
        let a = DMatrix::from_element(1, 1, 1.0);
        assert_relative_eq!(gibbs_covariance(&a, 2000.0).unwrap()[(0, 0)], 1.0 / 4000.0, epsilon = 1e-18);
        let s = gibbs_sample_covariance(&a, 2000.0, 200_000, 3).unwrap();
        // Relative standard error of a variance estimate is sqrt(2/n).
        assert!((s[(0, 0)] * 4000.0 - 1.0).abs() < 3.0 * (2.0f64 / 200_000.0).sqrt());
    }

    #[test]
    fn cov_acc_matches_two_pass() {
        let xs: Vec<[f64; 2]> = (0..50).map(|i| [(i as f64).sin(), (i as f64 * 0.3).cos() + 0.1 * i as f64]).collect();
        let mut acc = CovAcc::new(2);
        xs.iter().for_each(|x| acc.push(x));
        let n = xs.len() as f64;
        let m: Vec<f64> = (0..2).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let c01 = xs.iter().map(|x| (x[0] - m[0]) * (x[1] - m[1])).sum::<f64>() / (n - 1.0);
        assert_relative_eq!(acc.covariance()[(0, 1)], c01, epsilon = 1e-12);
    }

    #[test]
    fn rejects_unstable_eta() {
        let cfg = StationaryConfig {
            basis: BasisSet::monomials(&[1]),
            sigma: 0.5,
            alpha_bar: vec![1.0],
            input: InputDist::default(),
            n_data: 100,
            etas: vec![0.6],
            batches: vec![1],
            steps: 100,
            burn_in: 50,
            gibbs_samples: 100,
            seed: 1,
        };
        assert!(stationary_variance_experiment(&cfg).is_err());
        let cfg = StationaryConfig { etas: vec![0.01], burn_in: 100, ..cfg };
        assert!(stationary_variance_experiment(&cfg).is_err());
    }
}
