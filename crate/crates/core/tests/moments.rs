use geolearn::model::{BasisSet, InputDist};
use geolearn::moments::{
    estimate_a2, estimate_a4, estimate_expectation, variance_matrices, BasisFeatures, MomentMode, Sampling,
};
use proptest::prelude::*;

const N: usize = 1_000_000;

/// `E[x^n]` for a standard normal, by the double factorial.
fn normal_moment(n: u32) -> f64 {
    if n % 2 == 1 {
        0.0
    } else {
        (1..n).step_by(2).map(f64::from).product()
    }
}

#[test]
fn sampled_a2_agrees_with_exact_moments_up_to_cubics() {
    let bases: [&[u32]; 4] = [&[1], &[0, 1], &[0, 1, 2], &[0, 1, 2, 3]];
    for powers in bases {
        let basis = BasisSet::monomials(powers);
        let s = Sampling::new(N, 11);
        let exact = estimate_a2(&basis, InputDist::default(), &s, MomentMode::Exact).unwrap();
        let mc = estimate_a2(&basis, InputDist::default(), &s, MomentMode::Sampled).unwrap();
        let k = basis.len();
        for i in 0..k {
            for j in 0..k {
                let want = normal_moment(powers[i] + powers[j]);
                assert_eq!(exact.a2[(i, j)], want);
                let se = mc.std_err[(i, j)];
                assert!((mc.a2[(i, j)] - want).abs() <= 3.0 * se.max(1e-15), "{powers:?} ({i},{j})");
            }
        }
        let min_eig = mc.a2.clone().symmetric_eigen().eigenvalues.min();
        assert!(min_eig >= -3.0 * mc.max_std_err(), "{powers:?}: min eigenvalue {min_eig}");
        assert_eq!(mc.a2, mc.a2.transpose());
    }
}

#[test]
fn scalar_fourth_moment_and_product_variance() {
    let basis = BasisSet::monomials(&[1]);
    let s = Sampling::new(N, 5);
    let a4 = estimate_a4(&basis, InputDist::default(), &s, MomentMode::Sampled).unwrap();
    assert!((a4.get(0, 0, 0, 0) - 3.0).abs() <= 3.0 * a4.std_err_at(0, 0, 0, 0));

    let vm = variance_matrices(&basis, InputDist::default(), &s).unwrap();
    assert!((vm.f[(0, 0)] - 1.0).abs() < 0.01);
    // var(x²) has standard error sqrt((E[x⁸] − E[x⁴]²)/N) = sqrt(96/N).
    let se = (96.0 / N as f64).sqrt();
    assert!((vm.y[(0, 0)] - 2.0).abs() <= 3.0 * se, "Y = {}", vm.y[(0, 0)]);

    let constant = BasisSet::monomials(&[0]);
    let vc = variance_matrices(&constant, InputDist::default(), &s).unwrap();
    assert_eq!(vc.f[(0, 0)], 0.0);
    assert_eq!(vc.y[(0, 0)], 0.0);
}

#[test]
fn contraction_matches_a_direct_estimate_on_the_same_stream() {
    let basis = BasisSet::monomials(&[0, 1, 2]);
    let s = Sampling::new(200_000, 21);
    let a4 = estimate_a4(&basis, InputDist::default(), &s, MomentMode::Sampled).unwrap();
    let src = BasisFeatures::new(&basis, InputDist::default());
    let k = basis.len();
    for p in 0..k {
        for eta in 0..k {
            let contracted: f64 = (0..k).map(|z| a4.get(p, eta, z, z)).sum();
            let err: f64 = (0..k).map(|z| a4.std_err_at(p, eta, z, z)).sum();
            let (direct, se) =
                estimate_expectation(&src, &s, |phi| phi[p] * phi[eta] * phi.iter().map(|v| v * v).sum::<f64>())
                    .unwrap();
            assert!((contracted - direct).abs() <= 3.0 * (err + se) + 1e-9 * direct.abs(), "({p},{eta})");
        }
    }
}

proptest! {
    #[test]
    fn fourth_moments_are_fully_symmetric(
        q in proptest::array::uniform4(0usize..3),
        perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let basis = BasisSet::monomials(&[0, 1, 3]);
        let a4 = estimate_a4(&basis, InputDist::default(), &Sampling::new(1000, 2), MomentMode::Sampled).unwrap();
        let p = [q[perm[0]], q[perm[1]], q[perm[2]], q[perm[3]]];
        prop_assert_eq!(a4.get(q[0], q[1], q[2], q[3]).to_bits(), a4.get(p[0], p[1], p[2], p[3]).to_bits());
        prop_assert_eq!(a4.get(q[0], q[1], q[2], q[3]).to_bits(), a4.get(q[3], q[2], q[1], q[0]).to_bits());
    }
}
