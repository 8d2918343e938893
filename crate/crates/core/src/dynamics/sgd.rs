use super::{Method, Trajectory, TrajectoryConfig};
use crate::coupling::{coupling_matrix, ParameterMap, PINV_TOLERANCE};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::model::{BasisSet, Dataset};
use crate::rng::{self, Domain};
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;

/// Any `|α^μ|` above this aborts a run as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// How the gradient couples parameters during SGD.
#[derive(Debug, Clone)]
pub enum SgdCoupling {
    Identity,
    Fixed(DMatrix<f64>),
    /// `G` is recomputed every step from the Jacobian at the current weights.
    /// Weights follow the parameters through the pseudo-inverse,
    /// `w ← w + J⁺ Δα`.
    Map {
        pmap: ParameterMap,
        w0: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdOptions {
    pub eta: f64,
    pub batch: usize,
    /// Number of updates. One epoch is one update; state `k` sits at time
    /// `k·η`.
    pub steps: usize,
    pub seed: u64,
    /// Keep every `record_every`-th state (the last state is always kept).
    pub record_every: usize,
}

impl SgdOptions {
    pub fn new(eta: f64, batch: usize, steps: usize, seed: u64) -> Self {
        SgdOptions { eta, batch, steps, seed, record_every: 1 }
    }
}

/// Mini-batch SGD on the squared loss. Batches are drawn uniformly without
/// replacement, independently at every step. Each recorded loss is the batch
/// loss at the state before its update.
pub fn sgd_simulate(
    data: &Dataset,
    basis: &BasisSet,
    coupling: &SgdCoupling,
    alpha0: &[f64],
    opts: &SgdOptions,
) -> Result<Trajectory> {
    let every = opts.record_every.max(1);
    let mut traj = Trajectory::new(
        Method::Sgd,
        basis.len(),
        TrajectoryConfig {
            eta: Some(opts.eta),
            batch: Some(opts.batch),
            seed: Some(opts.seed),
            step: Some(opts.eta),
            ..TrajectoryConfig::default()
        },
    );
    let mut pushed: Result<()> = Ok(());
    sgd_run(data, basis, coupling, alpha0, opts, |step, alpha, loss| {
        if pushed.is_ok() && (step % every == 0 || step == opts.steps) {
            pushed = traj.push(step as f64 * opts.eta, alpha, Some(loss));
        }
    })?;
    pushed?;
    Ok(traj)
}

/// Core loop. Calls `visit(step, α_step, batch_loss)` for steps
/// `0..=opts.steps` and returns the final state.
pub(crate) fn sgd_run<F>(
    data: &Dataset,
    basis: &BasisSet,
    coupling: &SgdCoupling,
    alpha0: &[f64],
    opts: &SgdOptions,
    mut visit: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64], f64),
{
    let k = basis.len();
    let n = data.len();
    check_len("alpha0", k, alpha0.len())?;
    if !(opts.eta > 0.0 && opts.eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {}", opts.eta)));
    }
    if opts.batch == 0 || opts.batch > n {
        return Err(Error::InvalidArgument(format!("batch must lie in 1..={n}, got {}", opts.batch)));
    }
    let mut phi = vec![0.0; n * k];
    for (i, row) in phi.chunks_exact_mut(k).enumerate() {
        basis.eval_into(data.x[i], row)?;
    }

    let mut g: Option<DMatrix<f64>> = None;
    let mut weights: Option<(ParameterMap, DVector<f64>)> = None;
    match coupling {
        SgdCoupling::Identity => {}
        SgdCoupling::Fixed(m) => {
            check_len("coupling rows", k, m.nrows())?;
            check_len("coupling cols", k, m.ncols())?;
            g = Some(m.clone());
        }
        SgdCoupling::Map { pmap, w0 } => {
            check_len("parameter map output", k, pmap.k())?;
            g = Some(coupling_matrix(pmap, w0)?.g);
            weights = Some((pmap.clone(), DVector::from_column_slice(w0)));
        }
    }

    let mut rng = rng::stream(opts.seed, Domain::Sgd, 0);
    let mut alpha = alpha0.to_vec();
    let mut s = vec![0.0; k];
    let full_batch: Vec<usize> = if opts.batch == n { (0..n).collect() } else { Vec::new() };
    let scale = 1.0 / opts.batch as f64;

    for step in 0..=opts.steps {
        s.iter_mut().for_each(|v| *v = 0.0);
        let mut loss = 0.0;
        let mut accumulate = |i: usize| {
            let row = &phi[i * k..(i + 1) * k];
            let r = data.y_hat[i] - row.iter().zip(&alpha).map(|(p, a)| p * a).sum::<f64>();
            loss += r * r;
            for (sv, p) in s.iter_mut().zip(row) {
                *sv += r * p;
            }
        };
        if !full_batch.is_empty() {
            full_batch.iter().for_each(|&i| accumulate(i));
        } else if opts.batch == 1 {
            accumulate(rng.random_range(0..n));
        } else {
            index::sample(&mut rng, n, opts.batch).into_iter().for_each(&mut accumulate);
        }
        visit(step, &alpha, loss * scale);
        if step == opts.steps {
            break;
        }

        // ∂f/∂α = −(2/b) Gᵀ Σ r_i φ_i
        let grad: Vec<f64> = match &g {
            None => s.iter().map(|v| -2.0 * scale * v).collect(),
            Some(m) => (0..k).map(|mu| -2.0 * scale * (0..k).map(|eta| m[(eta, mu)] * s[eta]).sum::<f64>()).collect(),
        };
        for (a, gr) in alpha.iter_mut().zip(&grad) {
            *a -= opts.eta * gr;
        }
        let max_abs = alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        if !(max_abs <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged { step: step + 1, max_abs, alpha });
        }
        if let Some((pmap, w)) = weights.as_mut() {
            let j = pmap.jacobian(w.as_slice())?;
            let (pinv, _) = linalg::pseudo_inverse(&j, PINV_TOLERANCE);
            let d_alpha = DVector::from_iterator(k, grad.iter().map(|gr| -opts.eta * gr));
            *w += pinv * d_alpha;
            g = Some(coupling_matrix(pmap, w.as_slice())?.g);
        }
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_dataset, InputDist};

    #[test]
    fn full_batch_descent_is_monotone() {
        let b = BasisSet::monomials(&[0, 1]);
        let d = generate_dataset(&b, &[0.5, -1.0], 200, 0.0, InputDist::default(), 1).unwrap();
        let o = SgdOptions::new(0.1, 200, 100, 3);
        let t = sgd_simulate(&d, &b, &SgdCoupling::Identity, &[2.0, 2.0], &o).unwrap();
        assert_eq!(t.len(), 101);
        assert!(t.loss.windows(2).all(|w| w[1] <= w[0]));
        assert!(t.loss[100] < 1e-6 * t.loss[0]);
    }

    #[test]
    fn same_seed_same_path() {
        let b = BasisSet::monomials(&[0, 1]);
        let d = generate_dataset(&b, &[0.5, -1.0], 500, 0.1, InputDist::default(), 1).unwrap();
        let o = SgdOptions::new(0.01, 8, 300, 11);
        let t1 = sgd_simulate(&d, &b, &SgdCoupling::Identity, &[0.0, 0.0], &o).unwrap();
        let t2 = sgd_simulate(&d, &b, &SgdCoupling::Identity, &[0.0, 0.0], &o).unwrap();
        assert_eq!(t1, t2);
        let t3 = sgd_simulate(&d, &b, &SgdCoupling::Identity, &[0.0, 0.0], &SgdOptions { seed: 12, ..o }).unwrap();
        assert_ne!(t1.last_state(), t3.last_state());
    }

    #[test]
    fn divergence_is_reported() {
        let b = BasisSet::monomials(&[1]);
        let d = generate_dataset(&b, &[1.0], 100, 0.1, InputDist::default(), 1).unwrap();
        let o = SgdOptions::new(5.0, 100, 1000, 3);
        let err = sgd_simulate(&d, &b, &SgdCoupling::Identity, &[0.0], &o).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn rejects_bad_batch() {
        let b = BasisSet::monomials(&[1]);
        let d = generate_dataset(&b, &[1.0], 10, 0.1, InputDist::default(), 1).unwrap();
        assert!(sgd_simulate(&d, &b, &SgdCoupling::Identity, &[0.0], &SgdOptions::new(0.1, 11, 5, 0)).is_err());
        assert!(sgd_simulate(&d, &b, &SgdCoupling::Identity, &[0.0], &SgdOptions::new(0.0, 1, 5, 0)).is_err());
    }

    #[test]
    fn identity_map_matches_plain_sgd() {
        let b = BasisSet::monomials(&[0, 1]);
        let d = generate_dataset(&b, &[0.5, -1.0], 300, 0.1, InputDist::default(), 2).unwrap();
        let o = SgdOptions::new(0.02, 4, 200, 5);
        let plain = sgd_simulate(&d, &b, &SgdCoupling::Identity, &[0.0, 0.0], &o).unwrap();
        let mapped = sgd_simulate(
            &d,
            &b,
            &SgdCoupling::Map { pmap: ParameterMap::identity(2), w0: vec![0.0, 0.0] },
            &[0.0, 0.0],
            &o,
        )
        .unwrap();
        assert_eq!(plain.last_state(), mapped.last_state());
    }
}
