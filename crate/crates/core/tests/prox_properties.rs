mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tsprox::{project_simplex, prox_grad_map, prox_residual, Block, Regularizer};

fn kind() -> impl Strategy<Value = &'static str> {
    prop::sample::select(KINDS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prox_is_nonexpansive(kind in kind(), n in 1usize..8, seed in any::<u64>(), eta in 0.01f64..3.0) {
        let mut r = rng(seed);
        let g = regularizer(kind, n, &mut r);
        let u = vector(n, 3.0, &mut r);
        let v = vector(n, 3.0, &mut r);
        let (pu, pv) = (g.prox(&u, eta), g.prox(&v, eta));
        prop_assert!(dist(&pu, &pv) <= dist(&u, &v) + 1e-9);
    }

    #[test]
    fn residual_triangle_inequality(kind in kind(), n in 1usize..8, seed in any::<u64>(), eta in 0.01f64..3.0) {
        let mut r = rng(seed);
        let g = regularizer(kind, n, &mut r);
        let x = g.sample_point(n, 2.0, &mut r);
        let d1 = vector(n, 3.0, &mut r);
        let d2 = vector(n, 3.0, &mut r);
        let sum: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        let lhs = norm(&prox_residual(&g, &x, &sum, eta).unwrap());
        let rhs = norm(&prox_residual(&g, &x, &d1, eta).unwrap()) + norm(&d2);
        prop_assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
    }

    #[test]
    fn prox_minimizes_its_objective(kind in kind(), n in 1usize..8, seed in any::<u64>(), eta in 0.01f64..3.0) {
        let mut r = rng(seed);
        let g = regularizer(kind, n, &mut r);
        let x = g.sample_point(n, 2.0, &mut r);
        let d = vector(n, 3.0, &mut r);
        let p = prox_grad_map(&g, &x, &d, eta).unwrap();
        let v: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - eta * b).collect();
        let obj = |z: &[f64]| eta * g.value(z) + 0.5 * dist(z, &v).powi(2);
        let at_p = obj(&p);
        for _ in 0..20 {
            // nearby feasible competitors: convex combinations with domain points
            let y = g.sample_point(n, 2.0, &mut r);
            let s: f64 = r.random_range(0.0..1.0f64).powi(3);
            let z: Vec<f64> = p.iter().zip(&y).map(|(a, b)| a + s * (b - a)).collect();
            prop_assert!(at_p <= obj(&z) + 1e-9, "objective {at_p} > {}", obj(&z));
        }
    }

    #[test]
    fn simplex_l1_prox_equals_simplex_prox(n in 1usize..10, seed in any::<u64>(), eta in 0.01f64..3.0, mu in 0.0f64..5.0) {
        let mut r = rng(seed);
        let Regularizer::Simplex { blocks } = regularizer("simplex", n, &mut r) else { unreachable!() };
        let v = vector(n, 4.0, &mut r);
        let a = Regularizer::Simplex { blocks: blocks.clone() }.prox(&v, eta);
        let b = Regularizer::SimplexL1 { blocks, mu }.prox(&v, eta);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn simplex_projection_is_feasible_and_idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let p = project_simplex(&v).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|a| *a >= 0.0));
        let q = project_simplex(&p).unwrap();
        prop_assert!(dist(&p, &q) <= 1e-12);
    }

    #[test]
    fn simplex_projection_matches_grid_search(a in -1.0f64..2.0, b in -1.0f64..2.0, c in -1.0f64..2.0) {
        let v = [a, b, c];
        let p = project_simplex(&v).unwrap();
        let grid = simplex_grid_qp(&v, 1e-2);
        // the grid optimum is within one cell of the exact projection
        prop_assert!(dist(&p, &grid) <= 2e-2, "{p:?} vs {grid:?}");
        let obj = |z: &[f64]| dist(z, &v);
        prop_assert!(obj(&p) <= obj(&grid) + 1e-12);
    }
}

#[test]
fn simplex_projection_reference_values() {
    let cases: [([f64; 3], [f64; 3]); 3] = [
        ([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]),
        ([2.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
        ([0.9, 0.9, 0.2], [0.5, 0.5, 0.0]),
    ];
    for (v, want) in cases {
        let p = project_simplex(&v).unwrap();
        assert!(dist(&p, &want) <= 1e-12, "{v:?} -> {p:?}");
        let grid = simplex_grid_qp(&v, 1e-3);
        assert!(dist(&p, &grid) <= 2e-3, "{v:?}: grid {grid:?}");
    }
    assert!(project_simplex(&[]).is_err());
}

#[test]
fn blocks_project_independently() {
    let g = Regularizer::Simplex { blocks: Block::consecutive(&[2, 3]) };
    let v = [3.0, 1.0, 0.1, 0.2, 0.3];
    let p = g.prox(&v, 0.7);
    assert_eq!(&p[..2], &project_simplex(&v[..2]).unwrap()[..]);
    assert_eq!(&p[2..], &project_simplex(&v[2..]).unwrap()[..]);
}

#[test]
fn zero_residual_exactly_at_stationary_points() {
    // x = lo with an outward gradient is stationary for the box
    let g = Regularizer::uniform_box(2, -1.0, 1.0);
    let r = prox_residual(&g, &[-1.0, 1.0], &[3.0, -2.0], 0.3).unwrap();
    assert_eq!(r.as_slice(), &[0.0, 0.0]);
    let r = prox_residual(&g, &[0.0, 0.0], &[1.0, 0.0], 0.5).unwrap();
    assert_eq!(r.as_slice(), &[1.0, 0.0]);
}
