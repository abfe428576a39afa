//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsprox::{Block, Regularizer};

pub const KINDS: [&str; 5] = ["zero", "l1", "box", "simplex", "simplex_l1"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random regularizer of the given kind on `n` coordinates.
pub fn regularizer<R: Rng>(kind: &str, n: usize, rng: &mut R) -> Regularizer {
    match kind {
        "zero" => Regularizer::Zero,
        "l1" => Regularizer::L1 { mu: rng.random_range(0.0..2.0) },
        "box" => {
            let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..3.0)).collect();
            Regularizer::Box { lo, hi }
        }
        "simplex" | "simplex_l1" => {
            let mut lens = Vec::new();
            let mut left = n;
            while left > 0 {
                let k = rng.random_range(1..=left);
                lens.push(k);
                left -= k;
            }
            let blocks = Block::consecutive(&lens);
            if kind == "simplex" {
                Regularizer::Simplex { blocks }
            } else {
                Regularizer::SimplexL1 { blocks, mu: rng.random_range(0.0..2.0) }
            }
        }
        other => panic!("unknown kind {other}"),
    }
}

pub fn vector<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `prox_{ηg}` by its defining minimization, restricted to a grid on the
/// probability simplex in three dimensions. Returns the best grid point.
pub fn simplex_grid_qp(v: &[f64; 3], step: f64) -> [f64; 3] {
    let k = (1.0 / step).round() as usize;
    let mut best = [0.0; 3];
    let mut best_val = f64::INFINITY;
    for i in 0..=k {
        for j in 0..=(k - i) {
            let z = [i as f64 * step, j as f64 * step, (k - i - j) as f64 * step];
            let val: f64 = z.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if val < best_val {
                best_val = val;
                best = z;
            }
        }
    }
    best
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// A uniformly random point of the product of simplices given by `lens`,
/// kept `margin` away from the faces.
pub fn interior_simplex_point<R: Rng>(lens: &[usize], margin: f64, rng: &mut R) -> Vec<f64> {
    let mut x = Vec::new();
    for &k in lens {
        let raw: Vec<f64> = (0..k).map(|_| -rng.random_range(f64::EPSILON..1.0f64).ln()).collect();
        let s: f64 = raw.iter().sum();
        let free = 1.0 - margin * k as f64;
        x.extend(raw.iter().map(|r| margin + free * r / s));
    }
    x
}

/// Largest `‖fd − ∇‖∞ / max(‖∇‖∞, 1)` of the smooth OnTAP loss over `points`
/// random interior profiles and random demands.
pub fn ontap_fd_error(inst: &tsprox::ontap::OntapInstance, points: usize, seed: u64) -> f64 {
    use tsprox::ontap::{ontap_smooth_grad, ontap_smooth_loss};
    let mut r = rng(seed);
    let lens: Vec<usize> = inst.ods.iter().map(|od| od.paths.len()).collect();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x = interior_simplex_point(&lens, 1e-3, &mut r);
        let lambda: Vec<f64> = (0..lens.len()).map(|_| r.random_range(0.1..2.0)).collect();
        let grad = ontap_smooth_grad(inst, &x, &lambda).unwrap();
        // perturbations of 1e-7 stay inside the profile tolerance
        let fd = central_difference(|z| ontap_smooth_loss(inst, z, &lambda).unwrap(), &x, 1e-7);
        let scale = grad.iter().fold(1.0f64, |m, g| m.max(g.abs()));
        let err = grad.iter().zip(&fd).fold(0.0f64, |m, (g, f)| m.max((g - f).abs()));
        worst = worst.max(err / scale);
    }
    worst
}
