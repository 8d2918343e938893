use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("basis function {index} is not finite at x = {x}")]
    NonFiniteBasis { index: usize, x: f64 },

    #[error("non-finite intermediate value at sample {sample}")]
    NonFiniteSample { sample: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "epsilon {epsilon} is not admissible: need 0 <= epsilon < 1/lambda_max = {bound} (lambda_max = {lambda_max})"
    )]
    EpsilonOutOfRange { epsilon: f64, lambda_max: f64, bound: f64 },

    #[error("SGD diverged at step {step}: max |alpha| = {max_abs:e}")]
    Diverged { step: usize, max_abs: f64, alpha: Vec<f64> },

    #[error(
        "integration unstable at t = {t}: state norm more than doubled in one step; use a step smaller than {step}"
    )]
    StepInstability { t: f64, step: f64 },

    #[error("order bound regime not applicable: max eigenvalue of GAG is {0} (must be negative)")]
    RegimeNotApplicable(f64),

    #[error("order bound undefined: denominator {0} is not positive")]
    BoundUndefined(f64),

    #[error("{0} is singular or not positive definite")]
    Singular(&'static str),

    #[error("negative metric speed argument {value:e} at t = {t}")]
    NegativeSpeed { t: f64, value: f64 },

    #[error("probability table invalid: {0}")]
    Normalization(String),

    #[error("series too short: {got} points, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, got })
    }
}
