//! One pipeline per experiment kind. Each returns a results payload, its
//! checks and the CSV/JSON artifacts to write next to the report.

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind};
use crate::report::{csv_table, num, Artifact, Check, ExperimentReport};
use geolearn::complexity::{information_flow, theorem2_residual, DiscreteProcess};
use geolearn::coupling::CouplingMatrix;
use geolearn::curvature::{curvature_report, default_step, MetricField};
use geolearn::diffusion::{check_admissible, default_epsilon, identity1_curve, DiffusionField, DiffusionState};
use geolearn::dynamics::{
    closed_form_solution, geodesic_flow, gibbs_covariance, sgd_simulate, stability_classify,
    stationary_variance_experiment, uniform_grid, SgdCoupling, SgdOptions, Stability, StationaryConfig, Trajectory,
};
use geolearn::linalg;
use geolearn::model::{generate_dataset, BasisSet};
use geolearn::moments::{estimate_a2, estimate_a4, MomentMode, MomentTensor4, Sampling, TensorDump, DEFAULT_MAX_K};
use geolearn::rng::derive_seed;
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use std::time::Instant;

/// Tolerance used when classifying spectra.
pub const STABILITY_TOL: f64 = 1e-10;

/// Gibbs draws per stationary-variance grid point.
pub const GIBBS_SAMPLES: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] geolearn::Error),
}

struct Body {
    results: Value,
    checks: Vec<Check>,
    artifacts: Vec<Artifact>,
}

/// A finished run: the report plus every artifact (report JSON last).
#[derive(Debug)]
pub struct Outcome {
    pub report: ExperimentReport,
    pub artifacts: Vec<Artifact>,
}

/// Runs `cfg`. Configuration problems come back as `Err`; failures during
/// the computation are recorded in the report so it can still be written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    cfg.validate()?;
    let start = Instant::now();
    let stamp = format!("# {} config_hash={} seed={}\n", crate::report::TOOL_VERSION, cfg.hash(), cfg.seed);
    let body = match cfg.kind {
        ExperimentKind::Tensors => tensors(cfg, &stamp),
        ExperimentKind::Identity1 => identity1(cfg, &stamp),
        ExperimentKind::Simulate => simulate(cfg, &stamp),
        ExperimentKind::Stability => stability(cfg, &stamp),
        ExperimentKind::StationaryVariance => stationary(cfg, &stamp),
        ExperimentKind::Curvature => curvature(cfg, &stamp),
        ExperimentKind::ComplexityAction => complexity_action(cfg, &stamp),
        ExperimentKind::ReproduceAll => {
            return Err(ConfigError::Field {
                field: "kind".into(),
                message: "reproduce-all is not a single experiment".into(),
            })
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let (report, mut artifacts) = match body {
        Ok(b) => (ExperimentReport::new(cfg, b.results, b.checks, None, wall), b.artifacts),
        Err(RunError::Config(e)) => return Err(e),
        Err(RunError::Core(e)) => {
            let results = match &e {
                geolearn::Error::Diverged { step, max_abs, alpha } => {
                    json!({ "diverged_at_step": step, "max_abs_alpha": num(*max_abs), "alpha": alpha })
                }
                _ => Value::Null,
            };
            (ExperimentReport::new(cfg, results, vec![], Some(e.to_string()), wall), vec![])
        }
    };
    artifacts.push(Artifact::json(format!("{}_report.json", cfg.kind), &report));
    Ok(Outcome { report, artifacts })
}

fn moment_mode(cfg: &ExperimentConfig, basis: &BasisSet) -> MomentMode {
    if cfg.exact_moments && basis.has_exact_moments() {
        MomentMode::Exact
    } else {
        MomentMode::Sampled
    }
}

fn moments(cfg: &ExperimentConfig, basis: &BasisSet) -> Result<(DMatrix<f64>, MomentTensor4), RunError> {
    let mode = moment_mode(cfg, basis);
    let sampling = Sampling::new(cfg.n, derive_seed(cfg.seed, 0xA4));
    let input = cfg.input()?;
    Ok((estimate_a2(basis, input, &sampling, mode)?.a2, estimate_a4(basis, input, &sampling, mode)?))
}

fn field(cfg: &ExperimentConfig, basis: &BasisSet) -> Result<DiffusionField, RunError> {
    let (a2, a4) = moments(cfg, basis)?;
    let k = basis.len();
    Ok(DiffusionField::new(a2, a4, CouplingMatrix::identity(k), cfg.sigma, DVector::from_vec(cfg.alpha_bar.clone()))?)
}

/// The configured `ε`, or the default at `Δα`, checked for admissibility.
fn epsilon(cfg: &ExperimentConfig, field: &DiffusionField, delta: &DVector<f64>) -> Result<f64, RunError> {
    let d = field.d_inf_at_delta(delta)?;
    let eps = cfg.epsilon.unwrap_or_else(|| default_epsilon(&d));
    check_admissible(&d, eps).map_err(|e| ConfigError::Field { field: "epsilon".into(), message: e.to_string() })?;
    Ok(eps)
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| num(m[(i, j)])).collect())).collect())
}

fn trajectory_csv(name: &str, stamp: &str, traj: &Trajectory) -> Result<Artifact, RunError> {
    let dir = tempfile::tempdir().map_err(geolearn::Error::from)?;
    let path = dir.path().join("t.csv");
    traj.write_csv(&path)?;
    let body = std::fs::read_to_string(&path).map_err(geolearn::Error::from)?;
    Ok(Artifact::csv(name, stamp, &body))
}

fn tensors(cfg: &ExperimentConfig, stamp: &str) -> Result<Body, RunError> {
    let basis = cfg.basis_set()?;
    let input = cfg.input()?;
    let mode = moment_mode(cfg, &basis);
    let sampling = Sampling::new(cfg.n, cfg.seed);
    let a2 = estimate_a2(&basis, input, &sampling, mode)?;
    let a4 = if basis.len() <= DEFAULT_MAX_K { Some(estimate_a4(&basis, input, &sampling, mode)?) } else { None };
    let k = basis.len();
    let exact = basis
        .has_exact_moments()
        .then(|| DMatrix::from_fn(k, k, |i, j| basis.exact_moment(&input, &[i, j]).expect("exact moments available")));

    let mut checks = Vec::new();
    if let (Some(ex), MomentMode::Sampled) = (&exact, mode) {
        for i in 0..k {
            for j in i..k {
                let tol = (3.0 * a2.std_err[(i, j)]).max(1e-12);
                checks.push(Check::within(format!("A[{i}][{j}] within 3 SE"), ex[(i, j)], a2.a2[(i, j)], tol));
            }
        }
    }
    checks.push(Check::equals("A is PSD", true, a2.is_psd_within_tolerance()));

    let mut rows = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let e = exact.as_ref().map_or(f64::NAN, |m| m[(i, j)]);
            rows.push(vec![i as f64, j as f64, a2.a2[(i, j)], a2.std_err[(i, j)], e]);
        }
    }
    let mut artifacts =
        vec![Artifact::csv("tensors_a2.csv", stamp, &csv_table(&["i", "j", "value", "std_err", "exact"], rows))];
    let mut results = json!({
        "k": k,
        "mode": format!("{mode:?}").to_lowercase(),
        "samples": a2.samples,
        "a2": matrix_json(&a2.a2),
        "a2_std_err": matrix_json(&a2.std_err),
        "a2_exact": exact.as_ref().map(matrix_json),
    });
    if let Some(a4) = &a4 {
        let rows = a4.entries().map(|(ix, v, se)| vec![ix[0] as f64, ix[1] as f64, ix[2] as f64, ix[3] as f64, v, se]);
        artifacts.push(Artifact::csv(
            "tensors_a4.csv",
            stamp,
            &csv_table(&["a", "b", "c", "d", "value", "std_err"], rows),
        ));
        artifacts.push(Artifact::json("tensors_dump.json", &TensorDump::new(&a2, a4, Some(cfg.seed))));
        results["a4_stored_entries"] = json!(a4.stored_len());
        results["a4_max_std_err"] = num(a4.max_std_err());
    }
    Ok(Body { results, checks, artifacts })
}

/// Decades from 10³ up to `n`, with `n` itself last.
pub fn nested_sizes(n: usize) -> Vec<usize> {
    let mut ns: Vec<usize> =
        std::iter::successors(Some(1000usize), |v| v.checked_mul(10)).take_while(|&v| v < n).collect();
    ns.push(n);
    ns
}

/// Independent nested curves used by the convergence check.
pub const IDENTITY1_REPLICATES: u64 = 8;

/// Convergence curves on `reps` independent nested datasets, plus the
/// per-size mean distance.
pub fn identity1_replicates(
    basis: &BasisSet,
    field: &DiffusionField,
    delta: &DVector<f64>,
    input: geolearn::model::InputDist,
    ns: &[usize],
    seed: u64,
    reps: u64,
) -> geolearn::Result<(DMatrix<f64>, Vec<Vec<geolearn::diffusion::Identity1Point>>, Vec<f64>)> {
    let mut curves = Vec::new();
    let mut d_inf = DMatrix::zeros(0, 0);
    for r in 0..reps {
        let (d, c) = identity1_curve(basis, field, delta, input, ns, derive_seed(seed, r))?;
        d_inf = d;
        curves.push(c);
    }
    let means = (0..ns.len()).map(|i| curves.iter().map(|c| c[i].rel_frobenius).sum::<f64>() / reps as f64).collect();
    Ok((d_inf, curves, means))
}

/// Checks shared by the experiment and the acceptance suite: every replicate
/// within `bound` at `n_bound`, and the mean distance strictly decreasing
/// between the last two sizes.
pub fn identity1_checks(
    ns: &[usize],
    curves: &[Vec<geolearn::diffusion::Identity1Point>],
    means: &[f64],
    n_bound: usize,
    bound: f64,
) -> Vec<Check> {
    let mut checks = Vec::new();
    if let Some(i) = ns.iter().position(|&n| n == n_bound) {
        let worst = curves.iter().map(|c| c[i].rel_frobenius).fold(0.0, f64::max);
        checks.push(Check::at_most(format!("worst replicate distance at N={n_bound}"), worst, bound));
    }
    if let ([.., na, nb], [.., a, b]) = (ns, means) {
        checks.push(Check::below(format!("mean distance at N={nb} below N={na}"), *b, *a));
    }
    checks
}

fn identity1(cfg: &ExperimentConfig, stamp: &str) -> Result<Body, RunError> {
    let basis = cfg.basis_set()?;
    let field = field(cfg, &basis)?;
    let delta = DVector::from_vec(cfg.delta_alpha.clone());
    let ns = nested_sizes(cfg.n);
    let (d_inf, curves, means) =
        identity1_replicates(&basis, &field, &delta, cfg.input()?, &ns, cfg.seed, IDENTITY1_REPLICATES)?;
    let checks = identity1_checks(&ns, &curves, &means, 100_000, 0.05);
    let rows =
        curves.iter().enumerate().flat_map(|(r, c)| c.iter().map(move |p| vec![r as f64, p.n as f64, p.rel_frobenius]));
    Ok(Body {
        results: json!({ "d_inf": matrix_json(&d_inf), "curves": curves, "mean_distance": means }),
        checks,
        artifacts: vec![Artifact::csv(
            "identity1_curve.csv",
            stamp,
            &csv_table(&["replicate", "n", "rel_frobenius"], rows),
        )],
    })
}

fn simulate(cfg: &ExperimentConfig, stamp: &str) -> Result<Body, RunError> {
    let basis = cfg.basis_set()?;
    let field = field(cfg, &basis)?;
    let k = basis.len();
    let alpha_bar = DVector::from_vec(cfg.alpha_bar.clone());
    let delta0 = DVector::from_vec(cfg.delta_alpha.clone());
    let eps = epsilon(cfg, &field, &delta0)?;
    let (eta, batch) = (cfg.eta[0], cfg.batch[0]);

    let data = generate_dataset(&basis, &cfg.alpha_bar, cfg.n, cfg.sigma, cfg.input()?, cfg.seed)?;
    let mut opts = SgdOptions::new(eta, batch, cfg.epochs, derive_seed(cfg.seed, 1));
    opts.record_every = (cfg.epochs / 5000).max(1);
    let alpha0: Vec<f64> = (&alpha_bar + &delta0).iter().copied().collect();
    let sgd = sgd_simulate(&data, &basis, &SgdCoupling::Identity, &alpha0, &opts)?;
    let final_alpha = DVector::from_column_slice(sgd.last_state().expect("non-empty trajectory"));
    let dist = (&final_alpha - &alpha_bar).norm();
    let beta = 2.0 * batch as f64 / eta;
    let gibbs_sd = gibbs_covariance(&field.a2, beta)?.trace().sqrt();

    let grid = uniform_grid(cfg.t_end, cfg.dt);
    let ode = geodesic_flow(&field, &delta0, eps, &grid)?;
    let flat = geodesic_flow(&field, &delta0, 0.0, &grid)?;
    let conv = cfg.convention()?;
    let mut sup = 0.0f64;
    let mut rows = Vec::with_capacity(grid.len());
    for (i, &t) in grid.iter().enumerate() {
        let cf = closed_form_solution(&field.a2, &delta0, t, conv)? + &alpha_bar;
        let st = flat.state(i);
        sup = sup.max((0..k).map(|j| (st[j] - cf[j]).abs()).fold(0.0, f64::max));
        let mut row = vec![t];
        row.extend(st.iter().copied());
        row.extend(cf.iter().copied());
        rows.push(row);
    }
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|j| format!("ode_alpha_{j}")));
    header.extend((1..=k).map(|j| format!("closed_alpha_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();

    let checks = vec![
        Check::at_most("SGD final |alpha - alpha_bar| within 5 Gibbs sd", dist, 5.0 * gibbs_sd),
        Check::at_most(format!("eps=0 ODE vs closed form ({} rate), sup-norm", cfg.rate_convention), sup, 1e-6),
    ];
    Ok(Body {
        results: json!({
            "epsilon": num(eps),
            "beta": num(beta),
            "sgd_final_alpha": final_alpha.as_slice(),
            "sgd_final_distance": num(dist),
            "sgd_final_batch_loss": sgd.loss.last().copied().map(num),
            "gibbs_sd": num(gibbs_sd),
            "ode_final_alpha": ode.last_state(),
            "ode_vs_closed_sup": num(sup),
            "rate_convention": cfg.rate_convention,
        }),
        checks,
        artifacts: vec![
            trajectory_csv("simulate_sgd.csv", stamp, &sgd)?,
            trajectory_csv("simulate_ode.csv", stamp, &ode)?,
            Artifact::csv("simulate_closed_form.csv", stamp, &csv_table(&header, rows)),
        ],
    })
}

/// The three reference spectra: a Gram matrix, `diag(1, −1)`, all-ones.
pub fn canonical_stability() -> Vec<(&'static str, DMatrix<f64>, Stability)> {
    vec![
        (
            "A of basis (1,x,x^2)",
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 3.0]),
            Stability::Stable,
        ),
        ("diag(1,-1)", DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])), Stability::Unstable),
        ("all-ones 2x2", DMatrix::from_element(2, 2, 1.0), Stability::Marginal),
    ]
}

fn stability(cfg: &ExperimentConfig, stamp: &str) -> Result<Body, RunError> {
    let basis = cfg.basis_set()?;
    let field = field(cfg, &basis)?;
    let zero = DVector::zeros(basis.len());
    let eps = epsilon(cfg, &field, &zero)?;
    let two_a = field.gag() * 2.0;
    let linearized = (DMatrix::identity(basis.len(), basis.len()) - field.d_inf_at_delta(&zero)? * eps) * &two_a;

    let report = stability_classify(&field.a2, STABILITY_TOL)?;
    let flow = stability_classify(&linearized, STABILITY_TOL)?;
    // Independent oracle: a Gram matrix is stable exactly when it is positive definite.
    let oracle = if linalg::cholesky(&field.a2, "A").is_ok() && linalg::min_sym_eigenvalue(&field.a2) > STABILITY_TOL {
        Stability::Stable
    } else {
        Stability::Marginal
    };
    let mut checks = vec![Check::equals("A classification vs Cholesky oracle", oracle, report.classification)];
    let mut rows = Vec::new();
    for (name, m, expected) in canonical_stability() {
        let r = stability_classify(&m, STABILITY_TOL)?;
        checks.push(Check::equals(format!("canonical {name}"), expected, r.classification));
    }
    for (which, r) in [(0.0, &report), (1.0, &flow)] {
        rows.extend(r.eigenvalues.iter().map(|&(re, im)| vec![which, re, im]));
    }
    Ok(Body {
        results: json!({ "a2": report, "linearized_flow": flow, "epsilon": num(eps), "classification": report.classification }),
        checks,
        artifacts: vec![Artifact::csv("stability_eigenvalues.csv", stamp, &csv_table(&["matrix", "re", "im"], rows))],
    })
}

fn stationary(cfg: &ExperimentConfig, stamp: &str) -> Result<Body, RunError> {
    let basis = cfg.basis_set()?;
    let k = basis.len();
    let sc = StationaryConfig {
        basis,
        sigma: cfg.sigma,
        alpha_bar: cfg.alpha_bar.clone(),
        input: cfg.input()?,
        n_data: cfg.n,
        etas: cfg.eta.clone(),
        batches: cfg.batch.clone(),
        steps: cfg.epochs,
        burn_in: cfg.burn_in,
        gibbs_samples: GIBBS_SAMPLES,
        seed: cfg.seed,
    };
    let rep = stationary_variance_experiment(&sc).map_err(|e| match e {
        geolearn::Error::InvalidArgument(m) if m.contains("eta") => {
            RunError::Config(ConfigError::Field { field: "eta".into(), message: m })
        }
        e => RunError::Core(e),
    })?;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for p in &rep.points {
        let tag = format!("eta={} b={}", p.eta, p.batch);
        match &p.diverged {
            Some(msg) => checks.push(Check::equals(format!("{tag} converged"), "converged", msg)),
            None => {
                checks.push(Check::at_most(format!("{tag} covariance vs Gibbs (rel)"), p.rel_to_gibbs, 0.2));
                if k >= 2 {
                    checks.push(Check::at_most(format!("{tag} off-diagonal ratio"), p.off_diagonal_ratio, 0.1));
                }
            }
        }
        rows.push(vec![
            p.eta,
            p.batch as f64,
            p.beta,
            p.covariance.trace(),
            p.gibbs_covariance.trace(),
            p.gibbs_exact.trace(),
            p.det,
            p.rel_to_gibbs,
            p.beta_sigma_a.trace() / k as f64,
        ]);
    }
    checks.push(Check::at_most("isotropy distance of beta*Sigma*A from c*I", rep.isotropy_distance, 0.2));
    Ok(Body {
        results: serde_json::to_value(&rep).expect("report serializes"),
        checks,
        artifacts: vec![Artifact::csv(
            "stationary_points.csv",
            stamp,
            &csv_table(
                &[
                    "eta",
                    "batch",
                    "beta",
                    "trace_cov",
                    "trace_gibbs_sampled",
                    "trace_gibbs_exact",
                    "det_cov",
                    "rel_to_gibbs",
                    "c",
                ],
                rows,
            ),
        )],
    })
}

fn curvature(cfg: &ExperimentConfig, stamp: &str) -> Result<Body, RunError> {
    let basis = cfg.basis_set()?;
    let field = field(cfg, &basis)?;
    let delta = DVector::from_vec(cfg.delta_alpha.clone());
    let eps = epsilon(cfg, &field, &delta)?;
    let alpha = &field.alpha_bar + &delta;
    let h = cfg.h.unwrap_or_else(|| default_step(&alpha));
    let metric = MetricField::new(field, eps)?;
    let rep = curvature_report(&metric, &alpha, h)?;

    let mut checks = Vec::new();
    if let Some(rc) = rep.ricci_closed {
        checks.push(Check::within("Ricci fd vs closed form", rc, rep.ricci_fd, (1e-4 * rc.abs()).max(1e-6)));
    }
    checks.push(Check::within(
        "Ricci fd vs exact-derivative route",
        rep.ricci_analytic,
        rep.ricci_fd,
        (1e-4 * rep.ricci_analytic.abs()).max(1e-6),
    ));
    checks.push(Check::at_most("trace identity (fd pair)", rep.trace_residual_fd, 1e-8 * rep.ricci_fd.abs() + 1e-15));
    if let (Some(res), Some(rc)) = (rep.trace_residual_closed, rep.ricci_closed) {
        checks.push(Check::at_most("trace identity (closed pair)", res, 1e-8 * rc.abs() + 1e-15));
    }

    let mut rows = Vec::new();
    let k = metric.k();
    let mut push = |which: f64, m: &DMatrix<f64>| {
        for i in 0..k {
            for j in 0..k {
                rows.push(vec![which, i as f64, j as f64, m[(i, j)]]);
            }
        }
    };
    push(0.0, &rep.ricci_tensor_fd);
    push(1.0, &rep.einstein_fd);
    if let Some(e) = &rep.einstein_closed {
        push(2.0, &e.symmetrized);
    }
    Ok(Body {
        results: serde_json::to_value(&rep).expect("report serializes"),
        checks,
        artifacts: vec![Artifact::csv(
            "curvature_tensors.csv",
            stamp,
            &csv_table(&["tensor", "i", "j", "value"], rows),
        )],
    })
}

/// Information flow on the four reference processes: a single microstate,
/// the identity transition, independent uniform bits and bits whose futures
/// are perfectly correlated.
pub fn reference_information_flows() -> geolearn::Result<Vec<(&'static str, f64, f64)>> {
    let delta = DiscreteProcess::new(vec![1], vec![vec![1.0]])?;
    let identity = DiscreteProcess::identity(vec![2, 2], &[0.1, 0.2, 0.3, 0.4])?;
    let independent = DiscreteProcess::independent(vec![2, 2], &[0.25; 4], &[0.25; 4])?;
    let correlated = DiscreteProcess::independent(vec![2, 2], &[0.25; 4], &[0.5, 0.0, 0.0, 0.5])?;
    Ok(vec![
        ("delta", information_flow(&delta)?, 0.0),
        ("identity transition", information_flow(&identity)?, 0.0),
        ("independent uniform", information_flow(&independent)?, 0.0),
        ("correlated futures", information_flow(&correlated)?, std::f64::consts::LN_2),
    ])
}

fn complexity_action(cfg: &ExperimentConfig, stamp: &str) -> Result<Body, RunError> {
    let basis = cfg.basis_set()?;
    let field = field(cfg, &basis)?;
    let delta0 = DVector::from_vec(cfg.delta_alpha.clone());
    let eps = epsilon(cfg, &field, &delta0)?;
    let state = DiffusionState::at(&field, &delta0, Some(eps))?;
    let grid = uniform_grid(cfg.t_end, cfg.dt);
    let traj = geodesic_flow(&field, &delta0, eps, &grid)?;
    let data = generate_dataset(&basis, &cfg.alpha_bar, cfg.n, cfg.sigma, cfg.input()?, cfg.seed)?;
    let metric = MetricField::new(field, eps)?;
    let series = theorem2_residual(&traj, &metric, &data, &basis)?;

    let terminal = series.terminal_residual();
    let slope = series.final_quarter_gap_slope();
    let mut checks = vec![
        Check::at_most("terminal residual / peak |dS/dt|", terminal / series.peak_ds_dt, 1e-3),
        Check::below("final-quarter slope of |S - 2 sigma^2 eps C|", slope, 0.0),
    ];
    let flows = reference_information_flows()?;
    for (name, got, want) in &flows {
        checks.push(Check::within(format!("information flow, {name}"), *want, *got, 1e-9));
    }
    let dir = tempfile::tempdir().map_err(geolearn::Error::from)?;
    let path = dir.path().join("r.csv");
    series.write_csv(&path)?;
    let body = std::fs::read_to_string(&path).map_err(geolearn::Error::from)?;
    let last = series.t.len() - 1;
    Ok(Body {
        results: json!({
            "epsilon": num(eps),
            "d_inf_at_start": matrix_json(&state.d_inf),
            "action_final": num(series.s[last]),
            "complexity_final": num(series.c[last]),
            "complexity_initial": num(series.c[0]),
            "peak_ds_dt": num(series.peak_ds_dt),
            "terminal_residual": num(terminal),
            "terminal_gap": num(series.gap[last]),
            "final_quarter_gap_slope": num(slope),
            "information_flow": flows.iter().map(|(n, v, _)| json!({ "process": n, "value": num(*v) })).collect::<Vec<_>>(),
        }),
        checks,
        artifacts: vec![
            Artifact::csv("complexity_residual.csv", stamp, &body),
            trajectory_csv("complexity_trajectory.csv", stamp, &traj)?,
        ],
    })
}
