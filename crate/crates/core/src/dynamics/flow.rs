use super::{Method, Trajectory, TrajectoryConfig};
use crate::diffusion::DiffusionField;
use crate::error::{check_len, Error, Result};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Rate in the closed-form solution `exp(−r t A)Δα₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateConvention {
    /// `r = 1`, as the closed form is usually displayed.
    Paper,
    /// `r = 2`, the rate of the gradient flow of the squared loss.
    #[default]
    Flow,
}

impl RateConvention {
    pub fn rate(self) -> f64 {
        match self {
            RateConvention::Paper => 1.0,
            RateConvention::Flow => 2.0,
        }
    }
}

impl std::str::FromStr for RateConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(RateConvention::Paper),
            "flow" => Ok(RateConvention::Flow),
            _ => Err(Error::InvalidArgument(format!("rate convention must be paper or flow, got {s:?}"))),
        }
    }
}

/// `Δα(t) = exp(−r t A)Δα₀` (displacement from the optimum).
pub fn closed_form_solution(
    a2: &DMatrix<f64>,
    delta0: &DVector<f64>,
    t: f64,
    convention: RateConvention,
) -> Result<DVector<f64>> {
    check_len("delta_alpha0", a2.nrows(), delta0.len())?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be >= 0, got {t}")));
    }
    Ok(linalg::sym_exp_neg(a2, convention.rate() * t) * delta0)
}

/// `0, dt, 2dt, …` up to `t_end` (rounded to a whole number of steps).
pub fn uniform_grid(t_end: f64, dt: f64) -> Vec<f64> {
    let n = (t_end / dt).round() as usize;
    (0..=n).map(|i| i as f64 * dt).collect()
}

/// Integrates `dΔα/dt = −u + εD∞(Δα)u`, `u = 2GᵀAΔα`, with classical RK4 on
/// `t_grid`. `D∞` is re-evaluated at every stage. States are stored as
/// `α = ᾱ + Δα`.
pub fn geodesic_flow(
    field: &DiffusionField,
    delta0: &DVector<f64>,
    epsilon: f64,
    t_grid: &[f64],
) -> Result<Trajectory> {
    let k = field.k();
    check_len("delta_alpha0", k, delta0.len())?;
    if t_grid.first() != Some(&0.0) {
        return Err(Error::InvalidArgument("time grid must start at 0".into()));
    }
    let gta = field.coupling.g.transpose() * &field.a2 * 2.0;
    let rhs = |d: &DVector<f64>| -> Result<DVector<f64>> {
        let u = &gta * d;
        if epsilon == 0.0 {
            return Ok(-u);
        }
        let dinf = field.d_inf_at_delta(d)?;
        Ok(&dinf * &u * epsilon - u)
    };

    let mut traj = Trajectory::new(
        Method::Ode,
        k,
        TrajectoryConfig {
            epsilon: Some(epsilon),
            step: t_grid.get(1).map(|t| t - t_grid[0]),
            ..TrajectoryConfig::default()
        },
    );
    let mut d = delta0.clone();
    traj.push(0.0, (&field.alpha_bar + &d).as_slice(), None)?;
    for w in t_grid.windows(2) {
        let h = w[1] - w[0];
        let k1 = rhs(&d)?;
        let k2 = rhs(&(&d + &k1 * (h / 2.0)))?;
        let k3 = rhs(&(&d + &k2 * (h / 2.0)))?;
        let k4 = rhs(&(&d + &k3 * h))?;
        let next = &d + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let (old, new) = (d.norm(), next.norm());
        if !new.is_finite() || (old > 0.0 && new > 2.0 * old) {
            return Err(Error::StepInstability { t: w[1], step: h });
        }
        d = next;
        traj.push(w[1], (&field.alpha_bar + &d).as_slice(), None)?;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingMatrix;
    use crate::moments::MomentTensor4;
    use approx::assert_relative_eq;

    fn field(a: DMatrix<f64>) -> DiffusionField {
        let k = a.nrows();
        DiffusionField::new(a, MomentTensor4::from_fn(k, |_| 0.0), CouplingMatrix::identity(k), 0.1, DVector::zeros(k))
            .unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let one = DVector::from_element(1, 1.0);
        let v = closed_form_solution(&a, &one, 1.0, RateConvention::Flow).unwrap();
        assert_relative_eq!(v[0], (-2.0f64).exp(), epsilon = 1e-14);
        let v = closed_form_solution(&a, &one, 0.0, RateConvention::Paper).unwrap();
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn zero_start_stays_put() {
        let f = field(DMatrix::identity(2, 2));
        let t = geodesic_flow(&f, &DVector::zeros(2), 0.0, &uniform_grid(1.0, 0.01)).unwrap();
        assert!(t.states().all(|s| s == [0.0, 0.0]));
    }

    #[test]
    fn flow_matches_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = field(a.clone());
        let d0 = DVector::from_vec(vec![0.3, -0.7]);
        let grid = uniform_grid(2.0, 1e-3);
        let t = geodesic_flow(&f, &d0, 0.0, &grid).unwrap();
        let last = closed_form_solution(&a, &d0, 2.0, RateConvention::Flow).unwrap();
        let s = t.last_state().unwrap();
        assert!((s[0] - last[0]).abs() < 1e-10 && (s[1] - last[1]).abs() < 1e-10);
    }

    #[test]
    fn large_steps_are_rejected() {
        let f = field(DMatrix::from_element(1, 1, 10.0));
        let err = geodesic_flow(&f, &DVector::from_element(1, 1.0), 0.0, &uniform_grid(1.0, 0.5)).unwrap_err();
        assert!(matches!(err, Error::StepInstability { .. }));
    }
}
