use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use geolearn_lab::acceptance::reproduce_all;
use geolearn_lab::config::{ConfigError, ExperimentConfig, ExperimentKind, DEFAULT_SEED};
use geolearn_lab::experiments::run_experiment;
use geolearn_lab::report::write_all;
use serde_json::Value;
use std::path::PathBuf;
use std::process::ExitCode;

/// `println!` that ignores a closed stdout (e.g. when piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Diffusion-geometry experiments for SGD on basis-function regression.
#[derive(Parser)]
#[command(name = "geolearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample or compute the moment tensors A2 and A4.
    Tensors(RunArgs),
    /// Empirical diffusion vs its large-N limit on nested datasets.
    Identity1(RunArgs),
    /// SGD and geodesic-flow trajectories, with the closed-form comparison.
    #[command(alias = "dynamics")]
    Simulate(RunArgs),
    /// Spectral stability of A and of the linearized flow.
    Stability(RunArgs),
    /// Stationary SGD covariance over an (eta, batch) grid vs the Gibbs oracle.
    StationaryVariance(RunArgs),
    /// Ricci scalar and Einstein tensor, finite differences vs closed forms.
    Curvature(RunArgs),
    /// Action, complexity, their residual series and information flow.
    ComplexityAction(RunArgs),
    /// Run the full acceptance suite and write summary.json / summary.txt.
    ReproduceAll {
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// e.g. "1,x,x^2" or "fourier:3".
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha_bar: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta_alpha: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    eta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    batch: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Finite-difference step.
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    exact_moments: Option<bool>,
    /// flow | paper
    #[arg(long)]
    rate_convention: Option<String>,
    /// Any config field as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self, kind: ExperimentKind) -> Result<Vec<(String, Value)>, ConfigError> {
        let mut o: Vec<(String, Value)> = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| ConfigError::Field { field: kv.clone(), message: "expected KEY=VALUE".into() })?;
            o.push((k.trim().to_string(), ExperimentConfig::parse_override(kind, k.trim(), v)?));
        }
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(Value::from));
        put("out", self.out.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())));
        put("basis", self.basis.clone().map(Value::from));
        put("k", self.k.map(Value::from));
        put("n", self.n.map(Value::from));
        put("sigma", self.sigma.map(Value::from));
        put("alpha_bar", self.alpha_bar.clone().map(Value::from));
        put("delta_alpha", self.delta_alpha.clone().map(Value::from));
        put("epsilon", self.epsilon.map(Value::from));
        put("eta", self.eta.clone().map(Value::from));
        put("batch", self.batch.clone().map(Value::from));
        put("epochs", self.epochs.map(Value::from));
        put("burn_in", self.burn_in.map(Value::from));
        put("h", self.h.map(Value::from));
        put("t_end", self.t_end.map(Value::from));
        put("dt", self.dt.map(Value::from));
        put("exact_moments", self.exact_moments.map(Value::from));
        put("rate_convention", self.rate_convention.clone().map(Value::from));
        Ok(o)
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> anyhow::Result<ExitCode> {
    let resolved = args
        .overrides(kind)
        .and_then(|o| ExperimentConfig::resolve(kind, args.config.as_deref(), std::env::vars(), &o));
    let cfg = match resolved {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let outcome = match run_experiment(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let written = write_all(&cfg.out, &outcome.artifacts).context("writing artifacts")?;
    let r = &outcome.report;
    for c in &r.checks {
        say!("{}", c.line());
    }
    if let Some(e) = &r.error {
        eprintln!("run failed: {e}");
    }
    for p in written {
        say!("wrote {}", p.display());
    }
    say!("payload_hash {}  ({:.2}s)", r.payload_hash, r.wall_time_s);
    Ok(if r.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Tensors(a) => (ExperimentKind::Tensors, a),
        Command::Identity1(a) => (ExperimentKind::Identity1, a),
        Command::Simulate(a) => (ExperimentKind::Simulate, a),
        Command::Stability(a) => (ExperimentKind::Stability, a),
        Command::StationaryVariance(a) => (ExperimentKind::StationaryVariance, a),
        Command::Curvature(a) => (ExperimentKind::Curvature, a),
        Command::ComplexityAction(a) => (ExperimentKind::ComplexityAction, a),
        Command::ReproduceAll { out, seed } => {
            let summary = match reproduce_all(&out, seed, |c| say!("{}", c.line())) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::FAILURE);
                }
            };
            say!("wrote {}/summary.json and summary.txt", out.display());
            return Ok(if summary.all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
    };
    run(kind, args)
}
