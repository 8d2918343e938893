use geolearn::coupling::CouplingMatrix;
use geolearn::curvature::{
    christoffel, einstein_fd, einstein_tensor_closed, ricci_scalar_analytic, ricci_scalar_closed, ricci_scalar_fd,
    MetricField,
};
use geolearn::diffusion::DiffusionField;
use geolearn::model::{BasisSet, InputDist};
use geolearn::moments::{estimate_a2, estimate_a4, MomentMode, Sampling};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(powers: &[u32], epsilon: f64) -> MetricField {
    let basis = BasisSet::monomials(powers);
    let s = Sampling::new(2, 0);
    let a2 = estimate_a2(&basis, InputDist::default(), &s, MomentMode::Exact).unwrap().a2;
    let a4 = estimate_a4(&basis, InputDist::default(), &s, MomentMode::Exact).unwrap();
    let k = basis.len();
    let alpha_bar = DVector::from_fn(k, |i, _| 1.0 - 0.5 * i as f64);
    let diff = DiffusionField::new(a2, a4, CouplingMatrix::identity(k), 0.1, alpha_bar).unwrap();
    MetricField::new(diff, epsilon).unwrap()
}

fn normal_moment(n: u32) -> f64 {
    if n % 2 == 1 {
        0.0
    } else {
        (1..n).step_by(2).map(f64::from).product()
    }
}

/// The closed-form scalar summed term by term, outer index `p`, from raw
/// Gaussian moments of the monomial powers.
fn closed_ricci_oracle(powers: &[u32], epsilon: f64) -> f64 {
    let a = |i: usize, j: usize| normal_moment(powers[i] + powers[j]);
    let q = |i: usize, j: usize, k: usize, l: usize| normal_moment(powers[i] + powers[j] + powers[k] + powers[l]);
    let k = powers.len();
    let mut terms = [0.0; 6];
    for p in 0..k {
        for j in 0..k {
            for i in 0..k {
                terms[0] += 2.0 * q(i, i, p, j);
                terms[1] += a(p, i) * a(i, j);
                terms[2] += a(i, p) * a(p, i);
                terms[3] -= q(p, i, i, j);
                terms[4] -= q(i, p, p, i);
                terms[5] -= 2.0 * a(i, i) * a(p, j);
            }
        }
    }
    2.0 * epsilon * terms.iter().sum::<f64>()
}

fn probes(k: usize, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0))).collect()
}

#[test]
fn closed_scalar_matches_a_reordered_oracle() {
    for powers in [&[1u32][..], &[0, 1], &[0, 1, 2], &[1, 2, 3]] {
        let f = field(powers, 0.01);
        let got = ricci_scalar_closed(&f.diffusion.a2, &f.diffusion.a4, 0.01).unwrap();
        let want = closed_ricci_oracle(powers, 0.01);
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{powers:?}: {got} vs {want}");
    }
}

#[test]
fn scalar_basis_is_flat_everywhere() {
    let f = field(&[1], 0.05);
    let e = einstein_tensor_closed(&f.diffusion.a2, &f.diffusion.a4, 0.05).unwrap();
    assert!(e.raw[(0, 0)].abs() < 1e-12);
    for alpha in probes(1, 10, 1) {
        assert!(ricci_scalar_fd(&f, &alpha, 1e-3).unwrap().abs() <= 1e-6);
    }
}

#[test]
fn everything_vanishes_at_zero_epsilon() {
    for powers in [&[0u32, 1][..], &[0, 1, 2]] {
        let f = field(powers, 0.0);
        let k = powers.len();
        let alpha = DVector::from_element(k, 0.7);
        assert_eq!(ricci_scalar_fd(&f, &alpha, 1e-3).unwrap(), 0.0);
        assert_eq!(christoffel(&f, &alpha, 1e-3).unwrap().max_abs(), 0.0);
        assert_eq!(einstein_fd(&f, &alpha, 1e-3).unwrap().amax(), 0.0);
        assert_eq!(ricci_scalar_closed(&f.diffusion.a2, &f.diffusion.a4, 0.0).unwrap(), 0.0);
        assert_eq!(einstein_tensor_closed(&f.diffusion.a2, &f.diffusion.a4, 0.0).unwrap().raw.amax(), 0.0);
    }
}

#[test]
fn finite_difference_scalar_is_constant_in_alpha() {
    for powers in [&[1u32][..], &[0, 1], &[0, 1, 2]] {
        let f = field(powers, 0.01);
        let values: Vec<f64> =
            probes(powers.len(), 10, 3).iter().map(|a| ricci_scalar_fd(&f, a, 1e-3).unwrap()).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let r = values[0].abs();
        assert!(hi - lo <= 1e-4 * (r + 1e-6), "{powers:?}: spread {} around {r}", hi - lo);
    }
}

#[test]
fn finite_differences_converge_to_exact_derivatives() {
    for powers in [&[1u32][..], &[0, 1], &[0, 1, 2]] {
        let f = field(powers, 0.01);
        let exact = ricci_scalar_analytic(&f.diffusion, 0.01);
        let alpha = DVector::from_element(powers.len(), 0.3);
        for h in [1e-2, 1e-3] {
            let fd = ricci_scalar_fd(&f, &alpha, h).unwrap();
            assert!((fd - exact).abs() <= 1e-4 * exact.abs().max(1e-2), "{powers:?} h={h}: {fd} vs {exact}");
        }
    }
}
