//! Parameter dynamics: mini-batch SGD, the metric gradient flow and its
//! closed form, stability classification, and stationary-variance runs.

mod flow;
mod potential;
mod sgd;
mod stability;
mod stationary;

pub use flow::{closed_form_solution, geodesic_flow, uniform_grid, RateConvention};
pub use potential::{order_bound, potential_phi, potential_phi_gradient, potential_phi_gradient_coupled};
pub use sgd::{sgd_simulate, SgdCoupling, SgdOptions, DIVERGENCE_LIMIT};
pub use stability::{stability_classify, Stability, StabilityReport};
pub use stationary::{
    gibbs_covariance, gibbs_sample_covariance, stationary_variance_experiment, StationaryConfig, StationaryPoint,
    StationaryVarianceReport,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sgd,
    Ode,
    ClosedForm,
}

/// Settings a trajectory was produced with; unused fields stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub eta: Option<f64>,
    pub batch: Option<usize>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub step: Option<f64>,
}

/// Time-stamped parameter states, stored row-major (`T×K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: Method,
    pub k: usize,
    pub times: Vec<f64>,
    states: Vec<f64>,
    /// Loss at each recorded state, when the method defines one.
    pub loss: Vec<f64>,
    pub config: TrajectoryConfig,
}

impl Trajectory {
    pub fn new(method: Method, k: usize, config: TrajectoryConfig) -> Self {
        Trajectory { method, k, times: Vec::new(), states: Vec::new(), loss: Vec::new(), config }
    }

    pub fn from_parts(method: Method, times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        let k = states.first().map_or(0, Vec::len);
        let mut t = Trajectory::new(method, k, TrajectoryConfig::default());
        for (time, s) in times.into_iter().zip(states) {
            t.push(time, &s, None)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, t: f64, state: &[f64], loss: Option<f64>) -> Result<()> {
        crate::error::check_len("trajectory state", self.k, state.len())?;
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidArgument(format!("times must increase: {t} after {last}")));
            }
        }
        self.times.push(t);
        self.states.extend_from_slice(state);
        if let Some(l) = loss {
            self.loss.push(l);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.k..(i + 1) * self.k]
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.k.max(1))
    }

    /// Writes `t,alpha_1..alpha_K,loss`; the loss column is empty when the
    /// trajectory carries no losses.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.k).map(|i| format!("alpha_{i}")));
        header.push("loss".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.times[i].to_string()];
            rec.extend(self.state(i).iter().map(f64::to_string));
            rec.push(self.loss.get(i).map(f64::to_string).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
