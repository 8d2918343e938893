use geolearn::coupling::{coupling_matrix, hessian, ParameterMap};
use geolearn::model::{generate_dataset, loss_and_gradients, BasisSet, InputDist, ParameterState};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::sync::Arc;

fn smooth_map() -> (ParameterMap, ParameterMap) {
    let g = Arc::new(|w: &[f64]| vec![w[0].sin() + w[1], w[0] * w[1].exp(), w[1] * w[1]]);
    let j = Arc::new(|w: &[f64]| {
        DMatrix::from_row_slice(3, 2, &[w[0].cos(), 1.0, w[1].exp(), w[0] * w[1].exp(), 0.0, 2.0 * w[1]])
    });
    (ParameterMap::analytic(2, 3, g.clone(), j), ParameterMap::finite_difference(2, 3, g))
}

proptest! {
    #[test]
    fn fd_jacobian_matches_analytic(w0 in -1.5f64..1.5, w1 in -1.5f64..1.5) {
        let (analytic, fd) = smooth_map();
        let w = [w0, w1];
        let ja = analytic.jacobian(&w).unwrap();
        let jf = fd.jacobian(&w).unwrap();
        let scale = ja.amax().max(1.0);
        prop_assert!((&ja - &jf).amax() <= 1e-6 * scale);
    }

    #[test]
    fn coupling_has_unit_diagonal(w0 in -2.0f64..2.0, w1 in -2.0f64..2.0) {
        let (analytic, _) = smooth_map();
        for pmap in [analytic, ParameterMap::product(), ParameterMap::identity(2)] {
            let w = if pmap.l() == 2 { vec![w0, w1] } else { vec![w0; pmap.l()] };
            let c = coupling_matrix(&pmap, &w).unwrap();
            for mu in 0..c.k() {
                prop_assert_eq!(c.g[(mu, mu)], 1.0);
            }
        }
    }
}

#[test]
fn scalar_hessian_matches_loss_curvature() {
    let basis = BasisSet::monomials(&[1]);
    let data = generate_dataset(&basis, &[0.8], 50_000, 0.1, InputDist::default(), 17).unwrap();
    let g = DMatrix::identity(1, 1);
    let grad =
        |a: f64| loss_and_gradients(&data, &basis, &g, &ParameterState::new(DVector::from_element(1, a))).unwrap();
    let h = 1e-3;
    let fd = (grad(0.8 + h).mean_grad[0] - grad(0.8 - h).mean_grad[0]) / (2.0 * h);

    // Dataset Hessian is 2·mean(x²); its Monte Carlo error around 2A = 2 is 2·sqrt(2/N).
    let a2 = DMatrix::from_element(1, 1, 1.0);
    let hm = hessian(&a2, &g, &DVector::zeros(1), None).unwrap();
    let se = 2.0 * (2.0 / 50_000f64).sqrt();
    assert!((fd - hm[(0, 0)]).abs() <= 3.0 * se, "fd {fd} closed {}", hm[(0, 0)]);
    let mean_sq = data.x.iter().map(|x| x * x).sum::<f64>() / data.len() as f64;
    assert!((fd - 2.0 * mean_sq).abs() < 1e-8);
}
