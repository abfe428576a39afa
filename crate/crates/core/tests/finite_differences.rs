mod common;

use common::*;
use proptest::prelude::*;
use tsprox::ontap::{self, default_instance};
use tsprox::stream::{self, LossStream, QuadraticDriftStream};
use tsprox::Seed;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadratic_drift_gradient_matches_differences(seed in any::<u64>(), n in 1usize..8, t in 1usize..40) {
        let s = QuadraticDriftStream::new(n, 40, Some(7.0), Seed(seed), 1.0).unwrap();
        let mut r = rng(seed ^ 0xfd);
        let x = vector(n, 1.0, &mut r);
        let g = s.grad_at(t, &x);
        let fd = central_difference(|z| s.value_at(t, z), &x, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            // quadratics have exact central differences up to rounding
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn sliding_average_gradient_matches_differences(seed in any::<u64>(), w in 1usize..6, t in 1usize..20) {
        let s = QuadraticDriftStream::new(3, 20, Some(5.0), Seed(seed), 1.0).unwrap();
        let x = [0.3, -0.2, 0.5];
        let g = stream::sliding_average_grad(&s, t, w, &x).unwrap();
        let fd = central_difference(|z| stream::sliding_average_value(&s, t, w, z).unwrap(), &x, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }
}

#[test]
fn ontap_gradient_matches_differences() {
    let err = ontap_fd_error(&default_instance(), 100, 3);
    assert!(err <= 1e-5, "max relative error {err}");
}

#[test]
fn ontap_loads_follow_paths() {
    let inst = default_instance();
    let lens: Vec<usize> = inst.ods.iter().map(|od| od.paths.len()).collect();
    let mut r = rng(1);
    let x = interior_simplex_point(&lens, 0.0, &mut r);
    let lambda = [1.0, 0.8, 0.6];
    let loads = ontap::edge_loads(&inst, &x, &lambda).unwrap();
    // brute force: push every path's flow edge by edge
    let mut want = vec![0.0; inst.network.edges.len()];
    let mut share = vec![0.0; inst.network.edges.len()];
    let mut k = 0;
    for (i, od) in inst.ods.iter().enumerate() {
        for p in &od.paths {
            for &e in p {
                want[e] += lambda[i] * x[k];
                share[e] += x[k];
            }
            k += 1;
        }
    }
    assert_eq!(loads.len(), want.len());
    for (a, b) in loads.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12);
    }
    let total = ontap::ontap_smooth_loss(&inst, &x, &lambda).unwrap();
    let by_edges: f64 = want
        .iter()
        .enumerate()
        .map(|(e, y)| share[e] * (inst.bpr.a[e] + inst.bpr.b[e] * y.powi(4)))
        .sum();
    assert!((total - by_edges).abs() <= 1e-12 * total.abs().max(1.0));
}

#[test]
fn rigorous_constants_dominate_samples() {
    let q = QuadraticDriftStream::new(10, 50, Some(10.0), Seed(7), 1.0).unwrap();
    let g = q.domain();
    assert!(stream::max_smoothness_ratio(&q, &g, 1.0, 2000, Seed(1)) <= q.smoothness() * (1.0 + 1e-12));
    assert!(stream::max_abs_value(&q, &g, 1.0, 2000, Seed(2)) <= q.bound());

    let demand = ontap::default_demand(Some(10.0), 0.02, Seed(4));
    let (s, g) = ontap::make_ontap_stream(&default_instance(), &demand, 50, 0.1).unwrap();
    assert!(stream::max_smoothness_ratio(&s, &g, 1.0, 2000, Seed(1)) <= s.smoothness() * (1.0 + 1e-12));
    assert!(stream::max_abs_value(&s, &g, 1.0, 2000, Seed(2)) <= s.bound());
}
