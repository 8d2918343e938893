//! Reports, acceptance checks and atomic artifact writing.

use crate::config::{sha256_hex, ExperimentConfig, ExperimentKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const TOOL_VERSION: &str = concat!("geolearn-lab ", env!("CARGO_PKG_VERSION"));

/// One measured-vs-expected comparison. `tolerance` is printed verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: Value,
    pub observed: Value,
    pub tolerance: Value,
    pub passed: bool,
}

impl Check {
    /// `|observed − expected| ≤ tol`.
    pub fn within(name: impl Into<String>, expected: f64, observed: f64, tol: f64) -> Self {
        let passed = (observed - expected).abs() <= tol;
        Check { name: name.into(), expected: num(expected), observed: num(observed), tolerance: num(tol), passed }
    }

    /// `observed ≤ bound`.
    pub fn at_most(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            expected: Value::String(format!("<= {bound:e}")),
            observed: num(observed),
            tolerance: num(bound),
            passed: observed <= bound,
        }
    }

    /// `observed < bound`, strictly.
    pub fn below(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            expected: Value::String(format!("< {bound:e}")),
            observed: num(observed),
            tolerance: Value::String("strict".into()),
            passed: observed < bound,
        }
    }

    pub fn equals(name: impl Into<String>, expected: impl Serialize, observed: impl Serialize) -> Self {
        let expected = serde_json::to_value(expected).expect("serializable");
        let observed = serde_json::to_value(observed).expect("serializable");
        let passed = expected == observed;
        Check { name: name.into(), expected, observed, tolerance: Value::String("exact".into()), passed }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: observed {} expected {} tol {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.expected,
            self.tolerance
        )
    }
}

/// NaN and infinities become strings so that JSON stays valid.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or_else(|| Value::String(v.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub results: Value,
    pub checks: Vec<Check>,
    /// Set when the run aborted, e.g. on SGD divergence.
    pub error: Option<String>,
    /// SHA-256 of `results` and `checks`; stable across reruns.
    pub payload_hash: String,
    pub wall_time_s: f64,
}

impl ExperimentReport {
    pub fn new(
        config: &ExperimentConfig,
        results: Value,
        checks: Vec<Check>,
        error: Option<String>,
        wall: f64,
    ) -> Self {
        let payload_hash = payload_hash(&results, &checks);
        ExperimentReport {
            tool_version: TOOL_VERSION.into(),
            kind: config.kind,
            config: config.clone(),
            config_hash: config.hash(),
            seed: config.seed,
            results,
            checks,
            error,
            payload_hash,
            wall_time_s: wall,
        }
    }

    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.passed)
    }

    /// Comment line stamped at the top of every CSV artifact.
    pub fn stamp(&self) -> String {
        format!("# {} config_hash={} seed={}\n", self.tool_version, self.config_hash, self.seed)
    }
}

pub fn payload_hash(results: &Value, checks: &[Check]) -> String {
    sha256_hex(&serde_json::to_vec(&(results, checks)).expect("payload serializes"))
}

/// A named file to be written next to the report.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn json(name: impl Into<String>, value: &impl Serialize) -> Self {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        Artifact { name: name.into(), bytes }
    }

    /// CSV text with the report's provenance stamp prepended.
    pub fn csv(name: impl Into<String>, stamp: &str, body: &str) -> Self {
        Artifact { name: name.into(), bytes: format!("{stamp}{body}").into_bytes() }
    }
}

/// Builds CSV text from a header and rows of numbers.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

#[derive(Debug, thiserror::Error)]
#[error("cannot write to {dir}: {source}")]
pub struct WriteError {
    pub dir: PathBuf,
    pub source: std::io::Error,
}

/// Writes all artifacts into `dir`. Every file is staged as a temporary in
/// `dir` first and only renamed into place once all of them staged, so a
/// failure leaves no partial output behind.
pub fn write_all(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, WriteError> {
    let err = |source| WriteError { dir: dir.to_path_buf(), source };
    std::fs::create_dir_all(dir).map_err(err)?;
    let mut staged = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let mut tmp = tempfile::Builder::new().prefix(".geolearn-").tempfile_in(dir).map_err(err)?;
        std::io::Write::write_all(&mut tmp, &a.bytes).map_err(err)?;
        tmp.as_file().sync_all().map_err(err)?;
        staged.push((tmp, dir.join(&a.name)));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, path) in staged {
        if let Err(e) = tmp.persist(&path) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(err(e.error));
        }
        written.push(path);
    }
    Ok(written)
}

/// Plain-text table of checks.
pub fn checks_table(rows: &[(String, &Check)]) -> String {
    let mut s = String::new();
    let _ =
        writeln!(s, "{:<12} {:<48} {:<24} {:<24} {:<16} result", "group", "check", "expected", "observed", "tolerance");
    for (group, c) in rows {
        let _ = writeln!(
            s,
            "{:<12} {:<48} {:<24} {:<24} {:<16} {}",
            group,
            c.name,
            short(&c.expected),
            short(&c.observed),
            short(&c.tolerance),
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    s
}

fn short(v: &Value) -> String {
    match v {
        Value::Number(n) => n.as_f64().map(|f| format!("{f:.6e}")).unwrap_or_else(|| n.to_string()),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_constructors() {
        assert!(Check::within("a", 1.0, 1.05, 0.1).passed);
        assert!(!Check::within("a", 1.0, f64::NAN, 0.1).passed);
        assert!(Check::at_most("b", 0.1, 0.1).passed);
        assert!(!Check::below("c", 0.1, 0.1).passed);
        assert!(Check::equals("d", "stable", "stable").passed);
        assert_eq!(num(f64::NAN), Value::String("NaN".into()));
    }

    #[test]
    fn write_all_is_all_or_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let arts = vec![Artifact::json("a.json", &1), Artifact::csv("b.csv", "# s\n", "x\n1\n")];
        let paths = write_all(dir.path(), &arts).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(std::fs::read_to_string(dir.path().join("b.csv")).unwrap(), "# s\nx\n1\n");
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);
    }
}
