//! Acceptance suite: one test per criterion at the stated tolerances. Each
//! test prints a PASS/FAIL line, then the individual checks.

use geolearn_lab::acceptance::run_criterion;
use geolearn_lab::config::DEFAULT_SEED;

fn criterion(id: u32) {
    let r = run_criterion(id, DEFAULT_SEED);
    println!("{}", r.line());
    for c in &r.checks {
        println!("    {}", c.line());
    }
    if r.values != serde_json::Value::Null {
        println!("    values: {}", r.values);
    }
    assert!(r.passed(), "{}", r.line());
}

#[test]
fn criterion_01_moment_oracle() {
    criterion(1);
}

#[test]
fn criterion_02_diffusion_limit() {
    criterion(2);
}

#[test]
fn criterion_03_decomposition() {
    criterion(3);
}

#[test]
fn criterion_04_flat_flow() {
    criterion(4);
}

#[test]
fn criterion_05_stability() {
    criterion(5);
}

#[test]
fn criterion_06_stationary_variance() {
    criterion(6);
}

#[test]
fn criterion_07_hessian() {
    criterion(7);
}

#[test]
fn criterion_08_curvature() {
    criterion(8);
}

#[test]
fn criterion_09_complexity_information_flow() {
    criterion(9);
}

#[test]
fn criterion_10_residual_decay() {
    criterion(10);
}

#[test]
fn criterion_11_determinism() {
    criterion(11);
}
