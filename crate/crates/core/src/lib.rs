//! Numerical laboratory for the diffusion geometry of SGD on basis-function
//! regression.
//!
//! The model is `c(α; x) = Σ_μ α^μ φ_μ(x)` with a scalar Gaussian input.
//! Moment tensors of the basis under the input law determine the gradient
//! noise (`D∞`), the metric `I + εD∞`, its curvature, the linearized
//! dynamics, and the action/complexity pair along trajectories.

pub mod complexity;
pub mod coupling;
pub mod curvature;
pub mod diffusion;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod rng;

pub use error::{Error, Result};
