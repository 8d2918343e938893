//! Path potential `V`, action `S`, complexity `C`, information flow, and the
//! residual of the relation `dS/dt = 2σ²ε dC/dt − V` along a trajectory.

use crate::coupling::hessian;
use crate::curvature::MetricField;
use crate::diffusion::empirical_diffusion;
use crate::dynamics::Trajectory;
use crate::error::{check_len, Error, Result};
use crate::model::{loss_and_gradients, BasisSet, Dataset, ParameterState};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Finite-difference derivative. Uniform grids with at least five points get
/// the fourth-order five-point central stencil (one-sided five-point at the
/// two outermost points on each side); otherwise a three-point stencil that
/// tolerates non-uniform spacing.
pub fn derivative(t: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let n = t.len();
    check_len("series", n, f.len())?;
    if n < 2 {
        return Err(Error::TooShort { got: n, need: 2 });
    }
    if n == 2 {
        let d = (f[1] - f[0]) / (t[1] - t[0]);
        return Ok(vec![d, d]);
    }
    if n >= 5 {
        let h = (t[n - 1] - t[0]) / (n - 1) as f64;
        if t.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h) {
            return Ok(five_point(f, h));
        }
    }
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        let (h1, h2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        out[i] = -h2 / (h1 * (h1 + h2)) * f[i - 1] + (h2 - h1) / (h1 * h2) * f[i] + h1 / (h2 * (h1 + h2)) * f[i + 1];
    }
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    out[0] = -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * f[0] + (h1 + h2) / (h1 * h2) * f[1] - h1 / (h2 * (h1 + h2)) * f[2];
    let (h1, h2) = (t[n - 2] - t[n - 3], t[n - 1] - t[n - 2]);
    out[n - 1] = h2 / (h1 * (h1 + h2)) * f[n - 3] - (h1 + h2) / (h1 * h2) * f[n - 2]
        + (h1 + 2.0 * h2) / (h2 * (h1 + h2)) * f[n - 1];
    Ok(out)
}

fn five_point(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let s = 12.0 * h;
    let mut out = vec![0.0; n];
    for i in 2..n - 2 {
        out[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / s;
    }
    out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / s;
    out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / s;
    let m = n - 1;
    out[m] = (25.0 * f[m] - 48.0 * f[m - 1] + 36.0 * f[m - 2] - 16.0 * f[m - 3] + 3.0 * f[m - 4]) / s;
    out[m - 1] = (3.0 * f[m] + 10.0 * f[m - 1] - 18.0 * f[m - 2] + 6.0 * f[m - 3] - f[m - 4]) / s;
    out
}

/// Cumulative trapezoid integral, starting at 0.
pub fn cumulative_trapezoid(t: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    for i in 0..t.len() {
        if i > 0 {
            acc += 0.5 * (t[i] - t[i - 1]) * (f[i] + f[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Running quantities along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionAccumulator {
    pub times: Vec<f64>,
    /// Velocity rows `α̇(t_n)`.
    pub velocity: Vec<Vec<f64>>,
    /// `∫₀^{t_n} (α̇^μ)² dt` per `μ`.
    pub speed_sq_integrals: Vec<Vec<f64>>,
    /// `V(t_n) = Σ_μ H_μμ(α(t_n)) ∫(α̇^μ)² dt`.
    pub v: Vec<f64>,
    /// `V` with `H` frozen at the initial state.
    pub v_frozen: Vec<f64>,
    /// Cumulative action; empty until [`action`] fills it.
    pub s: Vec<f64>,
    pub quadrature: String,
}

fn velocities(traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let k = traj.k;
    let mut cols = Vec::with_capacity(k);
    for mu in 0..k {
        let series: Vec<f64> = traj.states().map(|s| s[mu]).collect();
        cols.push(derivative(&traj.times, &series)?);
    }
    Ok((0..traj.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect())
}

/// `V(t) = Σ_μ H_μμ ∫₀ᵗ (α̇^μ)² dt`, with `H` evaluated at the current state.
pub fn potential_v<H>(traj: &Trajectory, hessian_at: H) -> Result<ActionAccumulator>
where
    H: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    if traj.len() < 2 {
        return Err(Error::TooShort { got: traj.len(), need: 2 });
    }
    let k = traj.k;
    let vel = velocities(traj)?;
    let ints: Vec<Vec<f64>> = (0..k)
        .map(|mu| {
            let sq: Vec<f64> = vel.iter().map(|v| v[mu] * v[mu]).collect();
            cumulative_trapezoid(&traj.times, &sq)
        })
        .collect();
    let h0 = hessian_at(&DVector::from_column_slice(traj.state(0)))?;
    let mut v = Vec::with_capacity(traj.len());
    let mut v_frozen = Vec::with_capacity(traj.len());
    let mut rows = Vec::with_capacity(traj.len());
    for n in 0..traj.len() {
        let h = hessian_at(&DVector::from_column_slice(traj.state(n)))?;
        let row: Vec<f64> = (0..k).map(|mu| ints[mu][n]).collect();
        v.push((0..k).map(|mu| h[(mu, mu)] * row[mu]).sum());
        v_frozen.push((0..k).map(|mu| h0[(mu, mu)] * row[mu]).sum());
        rows.push(row);
    }
    Ok(ActionAccumulator {
        times: traj.times.clone(),
        velocity: vel,
        speed_sq_integrals: rows,
        v,
        v_frozen,
        s: Vec::new(),
        quadrature: "trapezoid".into(),
    })
}

/// Metric speed `sqrt(α̇ᵀα̇ + 4ε α̇ᵀ(C∞ + σ²GᵀAG)α̇)` at every point.
pub fn metric_speed(traj: &Trajectory, field: &MetricField, velocity: &[Vec<f64>]) -> Result<Vec<f64>> {
    let diff = &field.diffusion;
    let gag = diff.gag() * (diff.sigma * diff.sigma);
    let mut out = Vec::with_capacity(traj.len());
    for n in 0..traj.len() {
        let alpha = DVector::from_column_slice(traj.state(n));
        let delta = match &field.frozen_delta {
            Some(d) => d.clone(),
            None => &alpha - &diff.alpha_bar,
        };
        let c = diff.c_inf_at_delta(&delta)?;
        let u = DVector::from_column_slice(&velocity[n]);
        let plain = u.dot(&u);
        let arg = plain + 4.0 * field.epsilon * u.dot(&((&c + &gag) * &u));
        if arg < 0.0 {
            if arg < -1e-12 * plain.max(f64::MIN_POSITIVE) {
                return Err(Error::NegativeSpeed { t: traj.times[n], value: arg });
            }
            out.push(0.0);
        } else {
            out.push(arg.sqrt());
        }
    }
    Ok(out)
}

/// Cumulative action `S(t_n) = ∫₀^{t_n} (speed − V) dt` (trapezoid), stored
/// into `acc.s`. Returns the total.
pub fn action(traj: &Trajectory, field: &MetricField, acc: &mut ActionAccumulator, v_series: &[f64]) -> Result<f64> {
    check_len("V series", traj.len(), v_series.len())?;
    let speed = metric_speed(traj, field, &acc.velocity)?;
    let integrand: Vec<f64> = speed.iter().zip(v_series).map(|(s, v)| s - v).collect();
    acc.s = cumulative_trapezoid(&traj.times, &integrand);
    Ok(*acc.s.last().unwrap_or(&0.0))
}

/// `(1/N) Σ ∇f_i ∇f_iᵀ`, the uncentered gradient second-moment matrix.
pub fn gradient_second_moment(per_sample: &DMatrix<f64>) -> DMatrix<f64> {
    per_sample.transpose() * per_sample / per_sample.nrows() as f64
}

/// `C = Δαᵀ M Δα / (4σ²)` with `M` the gradient second-moment matrix at `ᾱ`.
pub fn complexity(per_sample_at_optimum: &DMatrix<f64>, delta: &DVector<f64>, sigma: f64) -> Result<f64> {
    check_len("delta_alpha", per_sample_at_optimum.ncols(), delta.len())?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if per_sample_at_optimum.nrows() < 2 {
        return Err(Error::TooShort { got: per_sample_at_optimum.nrows(), need: 2 });
    }
    let m = gradient_second_moment(per_sample_at_optimum);
    Ok(delta.dot(&(m * delta)) / (4.0 * sigma * sigma))
}

/// Joint distribution of a discrete state before and after one step. The
/// state is a tuple of ensemble states; microstates are numbered in mixed
/// radix with the first ensemble most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteProcess {
    /// Number of states of each ensemble.
    pub sizes: Vec<usize>,
    /// `joint[past][future]`.
    pub joint: Vec<Vec<f64>>,
}

const NORM_TOL: f64 = 1e-12;

impl DiscreteProcess {
    pub fn new(sizes: Vec<usize>, joint: Vec<Vec<f64>>) -> Result<Self> {
        let p = DiscreteProcess { sizes, joint };
        p.validate()?;
        Ok(p)
    }

    /// Future independent of the past: `joint = past ⊗ future`.
    pub fn independent(sizes: Vec<usize>, past: &[f64], future: &[f64]) -> Result<Self> {
        let joint = past.iter().map(|&a| future.iter().map(|&b| a * b).collect()).collect();
        DiscreteProcess::new(sizes, joint)
    }

    /// `future = past`, with the given past distribution.
    pub fn identity(sizes: Vec<usize>, past: &[f64]) -> Result<Self> {
        let n = past.len();
        let joint = (0..n).map(|i| (0..n).map(|j| if i == j { past[i] } else { 0.0 }).collect()).collect();
        DiscreteProcess::new(sizes, joint)
    }

    pub fn microstates(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Normalization("every ensemble needs at least one state".into()));
        }
        let m = self.microstates();
        if self.joint.len() != m || self.joint.iter().any(|r| r.len() != m) {
            return Err(Error::Normalization(format!("joint table must be {m}×{m}")));
        }
        if let Some(v) = self.joint.iter().flatten().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Normalization(format!("negative or non-finite probability {v}")));
        }
        let total: f64 = self.joint.iter().flatten().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::Normalization(format!("joint sums to {total}")));
        }
        Ok(())
    }

    pub fn past(&self) -> Vec<f64> {
        self.joint.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn future(&self) -> Vec<f64> {
        let m = self.microstates();
        (0..m).map(|j| self.joint.iter().map(|r| r[j]).sum()).collect()
    }

    /// State of ensemble `v` within microstate `m`.
    pub fn component(&self, m: usize, v: usize) -> usize {
        let stride: usize = self.sizes[v + 1..].iter().product();
        (m / stride) % self.sizes[v]
    }

    /// Joint past/future table of ensemble `v` alone.
    pub fn ensemble_joint(&self, v: usize) -> Vec<Vec<f64>> {
        let s = self.sizes[v];
        let mut t = vec![vec![0.0; s]; s];
        for (i, row) in self.joint.iter().enumerate() {
            let a = self.component(i, v);
            for (j, &p) in row.iter().enumerate() {
                t[a][self.component(j, v)] += p;
            }
        }
        t
    }
}

fn entropy<'a>(ps: impl IntoIterator<Item = &'a f64>) -> f64 {
    ps.into_iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// `H(future | past) = H(past, future) − H(past)`, natural log.
pub fn conditional_entropy(joint: &[Vec<f64>]) -> f64 {
    let past: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    entropy(joint.iter().flatten()) - entropy(&past)
}

/// `IF = Σ_v H(future_v | past_v) − H(future | past)`.
pub fn information_flow(process: &DiscreteProcess) -> Result<f64> {
    process.validate()?;
    let parts: f64 = (0..process.sizes.len()).map(|v| conditional_entropy(&process.ensemble_joint(v))).sum();
    Ok(parts - conditional_entropy(&process.joint))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub c: Vec<f64>,
    pub v: Vec<f64>,
    pub ds_dt: Vec<f64>,
    pub dc_dt: Vec<f64>,
    /// `|dS/dt − 2σ²ε dC/dt + V|`.
    pub residual: Vec<f64>,
    /// `|S − 2σ²εC|`.
    pub gap: Vec<f64>,
    pub peak_ds_dt: f64,
}

impl ResidualSeries {
    pub fn terminal_residual(&self) -> f64 {
        *self.residual.last().unwrap_or(&f64::NAN)
    }

    /// Least-squares slope of the gap over the last quarter of the window.
    pub fn final_quarter_gap_slope(&self) -> f64 {
        let start = 3 * self.t.len() / 4;
        let (t, g) = (&self.t[start..], &self.gap[start..]);
        let n = t.len() as f64;
        let mt = t.iter().sum::<f64>() / n;
        let mg = g.iter().sum::<f64>() / n;
        let num: f64 = t.iter().zip(g).map(|(a, b)| (a - mt) * (b - mg)).sum();
        let den: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
        num / den
    }

    /// Writes `t,S,C,dSdt,dCdt,residual`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "S", "C", "dSdt", "dCdt", "residual"])?;
        for i in 0..self.t.len() {
            w.write_record(
                [self.t[i], self.s[i], self.c[i], self.ds_dt[i], self.dc_dt[i], self.residual[i]]
                    .map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Action, complexity and residual along `traj`. The complexity uses the
/// gradient second moment of `dataset` at the field's optimum.
pub fn theorem2_residual(
    traj: &Trajectory,
    field: &MetricField,
    dataset: &Dataset,
    basis: &BasisSet,
) -> Result<ResidualSeries> {
    if traj.len() < 5 {
        return Err(Error::TooShort { got: traj.len(), need: 5 });
    }
    let diff = &field.diffusion;
    let (sigma, eps) = (diff.sigma, field.epsilon);
    let g = &diff.coupling.g;
    let mut acc = potential_v(traj, |a| hessian(&diff.a2, g, &(a - &diff.alpha_bar), None))?;
    let v = acc.v.clone();
    action(traj, field, &mut acc, &v)?;
    let lg = loss_and_gradients(dataset, basis, g, &ParameterState::new(diff.alpha_bar.clone()))?;
    let m = gradient_second_moment(&lg.per_sample);
    let c: Vec<f64> = traj
        .states()
        .map(|s| {
            let d = DVector::from_column_slice(s) - &diff.alpha_bar;
            d.dot(&(&m * &d)) / (4.0 * sigma * sigma)
        })
        .collect();
    let ds_dt = derivative(&traj.times, &acc.s)?;
    let dc_dt = derivative(&traj.times, &c)?;
    let k2 = 2.0 * sigma * sigma * eps;
    let residual: Vec<f64> = (0..traj.len()).map(|i| (ds_dt[i] - k2 * dc_dt[i] + v[i]).abs()).collect();
    let gap: Vec<f64> = acc.s.iter().zip(&c).map(|(s, c)| (s - k2 * c).abs()).collect();
    let peak_ds_dt = ds_dt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ResidualSeries { t: traj.times.clone(), s: acc.s, c, v, ds_dt, dc_dt, residual, gap, peak_ds_dt })
}

/// Empirical diffusion at the optimum, exposed for reports.
pub fn diffusion_at_optimum(
    dataset: &Dataset,
    basis: &BasisSet,
    g: &DMatrix<f64>,
    alpha_bar: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let lg = loss_and_gradients(dataset, basis, g, &ParameterState::new(alpha_bar.clone()))?;
    empirical_diffusion(&lg.per_sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Method;
    use approx::assert_relative_eq;
    use std::f64::consts::LN_2;

    fn line(k: usize, n: usize, dt: f64, v: f64) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let states = times.iter().map(|t| vec![v * t; k]).collect();
        Trajectory::from_parts(Method::Ode, times, states).unwrap()
    }

    #[test]
    fn derivative_is_exact_on_quadratics() {
        let t = vec![0.0, 0.1, 0.25, 0.3, 0.5];
        let f: Vec<f64> = t.iter().map(|x| 3.0 * x * x - x + 2.0).collect();
        for (d, x) in derivative(&t, &f).unwrap().iter().zip(&t) {
            assert_relative_eq!(*d, 6.0 * x - 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_derivative_is_exact_on_quartics() {
        let t: Vec<f64> = (0..9).map(|i| i as f64 * 0.25).collect();
        let f: Vec<f64> = t.iter().map(|x| x.powi(4) - 2.0 * x.powi(3) + x).collect();
        for (d, x) in derivative(&t, &f).unwrap().iter().zip(&t) {
            assert_relative_eq!(*d, 4.0 * x.powi(3) - 6.0 * x * x + 1.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn constant_velocity_potential() {
        let tr = line(1, 201, 0.01, 0.7);
        let acc = potential_v(&tr, |_| Ok(DMatrix::from_element(1, 1, 3.0))).unwrap();
        assert!((acc.v.last().unwrap() - 3.0 * 0.49 * 2.0).abs() < 1e-8);
        let still = line(2, 10, 0.1, 0.0);
        let acc = potential_v(&still, |_| Ok(DMatrix::identity(2, 2))).unwrap();
        assert!(acc.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn complexity_is_quadratic() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.2, 0.1]);
        let d = DVector::from_vec(vec![0.1, -0.2]);
        let c1 = complexity(&g, &d, 0.1).unwrap();
        let c2 = complexity(&g, &(&d * 2.0), 0.1).unwrap();
        assert_relative_eq!(c2, 4.0 * c1, epsilon = 1e-14);
        assert_eq!(complexity(&g, &DVector::zeros(2), 0.1).unwrap(), 0.0);
        assert!(complexity(&g, &d, 0.0).is_err());
    }

    #[test]
    fn information_flow_examples() {
        let delta = DiscreteProcess::new(vec![1], vec![vec![1.0]]).unwrap();
        assert_eq!(information_flow(&delta).unwrap(), 0.0);
        let ident = DiscreteProcess::identity(vec![2, 2], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(information_flow(&ident).unwrap().abs() < 1e-12);
        let u = [0.25; 4];
        let indep = DiscreteProcess::independent(vec![2, 2], &u, &u).unwrap();
        assert!(information_flow(&indep).unwrap().abs() < 1e-12);
        assert_relative_eq!(conditional_entropy(&indep.joint), 2.0 * LN_2, epsilon = 1e-12);
        let corr = DiscreteProcess::independent(vec![2, 2], &u, &[0.5, 0.0, 0.0, 0.5]).unwrap();
        assert_relative_eq!(information_flow(&corr).unwrap(), LN_2, epsilon = 1e-12);
    }

    #[test]
    fn rejects_unnormalized_tables() {
        assert!(DiscreteProcess::new(vec![2], vec![vec![0.5, 0.5], vec![0.5, 0.0]]).is_err());
        assert!(DiscreteProcess::new(vec![2], vec![vec![1.5, -0.5], vec![0.0, 0.0]]).is_err());
        assert!(DiscreteProcess::new(vec![2], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn mixed_radix_components() {
        let p = DiscreteProcess::independent(vec![2, 3], &[1.0 / 6.0; 6], &[1.0 / 6.0; 6]).unwrap();
        assert_eq!((p.component(4, 0), p.component(4, 1)), (1, 1));
        assert_eq!((p.component(2, 0), p.component(2, 1)), (0, 2));
    }
}
