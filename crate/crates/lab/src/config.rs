//! Experiment configuration: defaults, JSON files, environment and CLI
//! overrides, validation and content hashing.
//!
//! Resolution order, later wins: built-in defaults for the kind, the JSON
//! config file, `GEOLEARN_<FIELD>` environment variables, command-line flags.

use clap::ValueEnum;
use geolearn::dynamics::RateConvention;
use geolearn::model::{BasisSet, BasisSpec, InputDist};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Prefix for environment overrides, e.g. `GEOLEARN_SEED=11`.
pub const ENV_PREFIX: &str = "GEOLEARN_";

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {message}")]
    Field { field: String, message: String },

    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("config file {path} is not valid JSON: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Tensors,
    Identity1,
    #[serde(alias = "dynamics")]
    Simulate,
    Stability,
    StationaryVariance,
    Curvature,
    ComplexityAction,
    ReproduceAll,
}

impl ExperimentKind {
    pub const RUNNABLE: [ExperimentKind; 7] = [
        ExperimentKind::Tensors,
        ExperimentKind::Identity1,
        ExperimentKind::Simulate,
        ExperimentKind::Stability,
        ExperimentKind::StationaryVariance,
        ExperimentKind::Curvature,
        ExperimentKind::ComplexityAction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Tensors => "tensors",
            ExperimentKind::Identity1 => "identity1",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Stability => "stability",
            ExperimentKind::StationaryVariance => "stationary-variance",
            ExperimentKind::Curvature => "curvature",
            ExperimentKind::ComplexityAction => "complexity-action",
            ExperimentKind::ReproduceAll => "reproduce-all",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully resolved experiment configuration. Every field is always present
/// in the echoed copy inside reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Basis spec: comma-separated monomials (`"1,x,x^2"`) or `"fourier:N"`.
    pub basis: String,
    /// Number of basis functions; `null` means "whatever the basis has".
    pub k: Option<usize>,
    /// Sample count: Monte Carlo draws or dataset size, depending on kind.
    pub n: usize,
    pub sigma: f64,
    pub alpha_bar: Vec<f64>,
    /// Displacement from the optimum: ODE/SGD start or probe point.
    pub delta_alpha: Vec<f64>,
    /// Metric parameter; `null` picks half the admissible bound.
    pub epsilon: Option<f64>,
    /// Learning rates; `simulate` uses the first.
    pub eta: Vec<f64>,
    /// Batch sizes; `simulate` uses the first.
    pub batch: Vec<usize>,
    /// SGD steps (one update per epoch).
    pub epochs: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Finite-difference step; `null` uses `1e-3(1 + max|α|)`.
    pub h: Option<f64>,
    pub t_end: f64,
    pub dt: f64,
    /// Use closed-form Gaussian moments instead of sampling when available.
    pub exact_moments: bool,
    /// `flow` (rate 2, matches the ODE) or `paper` (rate 1).
    pub rate_convention: String,
    pub input_mean: f64,
    pub input_variance: f64,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Documented defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            kind,
            basis: "1,x".into(),
            k: None,
            n: 100_000,
            sigma: 0.1,
            alpha_bar: vec![1.0, -0.5],
            delta_alpha: vec![0.05, 0.05],
            epsilon: None,
            eta: vec![0.01],
            batch: vec![32],
            epochs: 10_000,
            burn_in: 0,
            seed: DEFAULT_SEED,
            h: None,
            t_end: 5.0,
            dt: 1e-3,
            exact_moments: true,
            rate_convention: "flow".into(),
            input_mean: 0.0,
            input_variance: 1.0,
            out: PathBuf::from("results"),
        };
        match kind {
            ExperimentKind::Tensors => ExperimentConfig {
                basis: "1,x,x^2".into(),
                n: 1_000_000,
                alpha_bar: vec![1.0, -0.5, 0.25],
                delta_alpha: vec![0.0; 3],
                exact_moments: false,
                ..base
            },
            ExperimentKind::Identity1 => ExperimentConfig { n: 1_000_000, ..base },
            ExperimentKind::Simulate => ExperimentConfig { delta_alpha: vec![0.5, 0.5], ..base },
            ExperimentKind::Stability => ExperimentConfig {
                basis: "1,x,x^2".into(),
                alpha_bar: vec![1.0, -0.5, 0.25],
                delta_alpha: vec![0.0; 3],
                ..base
            },
            ExperimentKind::StationaryVariance => ExperimentConfig {
                basis: "x".into(),
                sigma: 0.5,
                alpha_bar: vec![1.0],
                delta_alpha: vec![0.0],
                eta: vec![0.01, 0.005, 0.002, 0.001],
                batch: vec![1],
                epochs: 2_000_000,
                burn_in: 1_000_000,
                ..base
            },
            ExperimentKind::Curvature => ExperimentConfig { epsilon: Some(0.01), h: Some(1e-3), ..base },
            ExperimentKind::ComplexityAction => ExperimentConfig { epsilon: Some(0.01), ..base },
            ExperimentKind::ReproduceAll => base,
        }
    }

    /// Defaults, then `file`, then `env`, then `cli` overrides.
    pub fn resolve(
        kind: ExperimentKind,
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        cli: &[(String, Value)],
    ) -> Result<Self, ConfigError> {
        let mut map = match serde_json::to_value(Self::defaults(kind)).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        if let Some(path) = file {
            let text =
                std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
            let value: Value =
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
            let Value::Object(obj) = value else {
                return Err(field_err("<root>", "config file must contain a JSON object"));
            };
            for (key, v) in obj {
                let alias_ok = kind == ExperimentKind::Simulate && v == Value::String("dynamics".into());
                if key == "kind" && v != Value::String(kind.name().into()) && !alias_ok {
                    return Err(field_err("kind", format!("file says {v}, command is {kind}")));
                }
                set_field(&mut map, &key, v)?;
            }
        }
        for (name, raw) in env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = rest.to_ascii_lowercase();
            if key == "kind" {
                continue;
            }
            let parsed = parse_raw(&map, &key, &raw)?;
            set_field(&mut map, &key, parsed)?;
        }
        for (key, v) in cli {
            set_field(&mut map, key, v.clone())?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(Value::Object(map)).map_err(|e| {
            let msg = e.to_string();
            let field = msg.split('`').nth(1).unwrap_or("<config>").to_string();
            ConfigError::Field { field, message: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a `--set key=value` or environment style raw string for `key`.
    pub fn parse_override(kind: ExperimentKind, key: &str, raw: &str) -> Result<Value, ConfigError> {
        let defaults = match serde_json::to_value(Self::defaults(kind)).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        parse_raw(&defaults, key, raw)
    }

    pub fn basis_set(&self) -> Result<BasisSet, ConfigError> {
        let spec: BasisSpec = self.basis.parse().map_err(|e: geolearn::Error| field_err("basis", e.to_string()))?;
        BasisSet::new(spec).map_err(|e| field_err("basis", e.to_string()))
    }

    pub fn input(&self) -> Result<InputDist, ConfigError> {
        InputDist::new(self.input_mean, self.input_variance).map_err(|e| field_err("input_variance", e.to_string()))
    }

    pub fn convention(&self) -> Result<RateConvention, ConfigError> {
        self.rate_convention.parse().map_err(|e: geolearn::Error| field_err("rate_convention", e.to_string()))
    }

    /// Structural checks that do not need any computation. Admissibility of
    /// `epsilon` is checked where `D∞` is known and reported against the same
    /// field name.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let basis = self.basis_set()?;
        let k = basis.len();
        if let Some(kk) = self.k {
            if kk != k {
                return Err(field_err("k", format!("basis has {k} functions, k says {kk}")));
            }
        }
        self.input()?;
        self.convention()?;
        if self.n < 2 {
            return Err(field_err("n", "must be at least 2"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(field_err("sigma", "must be finite and >= 0"));
        }
        if self.alpha_bar.len() != k {
            return Err(field_err("alpha_bar", format!("needs {k} entries, got {}", self.alpha_bar.len())));
        }
        if self.delta_alpha.len() != k {
            return Err(field_err("delta_alpha", format!("needs {k} entries, got {}", self.delta_alpha.len())));
        }
        if self.alpha_bar.iter().chain(&self.delta_alpha).any(|v| !v.is_finite()) {
            return Err(field_err("alpha_bar", "entries must be finite"));
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(field_err("epsilon", "must be finite and >= 0"));
            }
        }
        if self.eta.is_empty() || self.eta.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(field_err("eta", "needs at least one value, all > 0"));
        }
        if self.batch.is_empty() || self.batch.contains(&0) {
            return Err(field_err("batch", "needs at least one value, all >= 1"));
        }
        if let Some(&b) = self.batch.iter().find(|&&b| b > self.n) {
            return Err(field_err("batch", format!("batch {b} exceeds n = {}", self.n)));
        }
        if self.epochs == 0 {
            return Err(field_err("epochs", "must be >= 1"));
        }
        if self.kind == ExperimentKind::StationaryVariance && self.burn_in >= self.epochs {
            return Err(field_err("burn_in", format!("must be below epochs = {}", self.epochs)));
        }
        if let Some(h) = self.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(field_err("h", "must be > 0"));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(field_err("dt", "must be > 0"));
        }
        if !(self.t_end > self.dt && self.t_end.is_finite()) {
            return Err(field_err("t_end", "must exceed dt"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything except `out`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("out");
        }
        sha256_hex(&serde_json::to_vec(&v).expect("value serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn set_field(map: &mut Map<String, Value>, key: &str, v: Value) -> Result<(), ConfigError> {
    if !map.contains_key(key) {
        return Err(field_err(key, "unknown field"));
    }
    map.insert(key.to_string(), v);
    Ok(())
}

/// Interprets a raw string using the type of the field's current value:
/// lists accept `a,b,c`, optional numbers accept `null`, everything else is
/// tried as JSON first and as a plain string second.
fn parse_raw(map: &Map<String, Value>, key: &str, raw: &str) -> Result<Value, ConfigError> {
    let current = map.get(key).ok_or_else(|| field_err(key, "unknown field"))?;
    let raw = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        if !(current.is_array() && !v.is_array()) && !(current.is_string() && !v.is_string()) {
            return Ok(v);
        }
    }
    if current.is_array() {
        let items = raw
            .split(',')
            .map(|s| {
                serde_json::from_str::<Value>(s.trim()).map_err(|e| field_err(key, format!("bad list item {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(Value::Array(items));
    }
    if current.is_string() {
        return Ok(Value::String(raw.to_string()));
    }
    Err(field_err(key, format!("cannot parse {raw:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for kind in ExperimentKind::RUNNABLE {
            ExperimentConfig::defaults(kind).validate().unwrap();
        }
    }

    #[test]
    fn precedence_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 3, "sigma": 0.2}"#).unwrap();
        let env = vec![("GEOLEARN_SEED".to_string(), "5".to_string()), ("OTHER".into(), "x".into())];
        let cli = vec![("sigma".to_string(), Value::from(0.3))];
        let cfg = ExperimentConfig::resolve(ExperimentKind::Identity1, Some(&path), env, &cli).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.sigma, 0.3);

        let mut moved = cfg.clone();
        moved.out = PathBuf::from("elsewhere");
        assert_eq!(moved.hash(), cfg.hash());
        moved.seed += 1;
        assert_ne!(moved.hash(), cfg.hash());
    }

    #[test]
    fn errors_name_the_field() {
        let bad = |key: &str, raw: &str| {
            let v = ExperimentConfig::parse_override(ExperimentKind::Simulate, key, raw).unwrap();
            match ExperimentConfig::resolve(ExperimentKind::Simulate, None, vec![], &[(key.into(), v)]) {
                Err(ConfigError::Field { field, .. }) => field,
                other => panic!("expected field error, got {other:?}"),
            }
        };
        assert_eq!(bad("n", "0"), "n");
        assert_eq!(bad("sigma", "-1"), "sigma");
        assert_eq!(bad("eta", "0.01,-2"), "eta");
        assert_eq!(bad("alpha_bar", "1,2,3"), "alpha_bar");
        assert_eq!(bad("basis", "1,y"), "basis");
        let e =
            ExperimentConfig::resolve(ExperimentKind::Simulate, None, vec![("GEOLEARN_BOGUS".into(), "1".into())], &[]);
        assert!(matches!(e, Err(ConfigError::Field { field, .. }) if field == "bogus"));
    }

    #[test]
    fn list_and_null_parsing() {
        let v = ExperimentConfig::parse_override(ExperimentKind::StationaryVariance, "eta", "0.01, 0.002").unwrap();
        assert_eq!(v, serde_json::json!([0.01, 0.002]));
        let v = ExperimentConfig::parse_override(ExperimentKind::Curvature, "epsilon", "null").unwrap();
        assert_eq!(v, Value::Null);
        let v = ExperimentConfig::parse_override(ExperimentKind::Tensors, "basis", "1,x").unwrap();
        assert_eq!(v, Value::String("1,x".into()));
    }
}
