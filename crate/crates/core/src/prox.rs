//! Proximal operators, the prox-grad map and the prox residual.
//!
//! Every operator here is closed-form: soft-thresholding, coordinate clamps
//! and sort-based simplex projection. No iterative inner solver is used.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{norm, DecisionVector};

/// Membership tolerance used by indicator values.
pub const DOMAIN_TOL: f64 = 1e-9;

/// Contiguous index range `start..start + len` forming one simplex block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub len: usize,
}

impl Block {
    pub fn new(start: usize, len: usize) -> Self {
        Block { start, len }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }

    /// Consecutive blocks with the given lengths starting at 0.
    pub fn consecutive(lens: &[usize]) -> Vec<Block> {
        let mut start = 0;
        lens.iter()
            .map(|&len| {
                let b = Block { start, len };
                start += len;
                b
            })
            .collect()
    }
}

/// The convex, proper, l.s.c. part `g ≥ 0` of a composite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    Zero,
    L1 { mu: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Simplex { blocks: Vec<Block> },
    SimplexL1 { blocks: Vec<Block>, mu: f64 },
}

impl Regularizer {
    /// `[lo, hi]ⁿ`.
    pub fn uniform_box(n: usize, lo: f64, hi: f64) -> Self {
        Regularizer::Box {
            lo: vec![lo; n],
            hi: vec![hi; n],
        }
    }

    /// Checks the parameters against a problem dimension.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Regularizer::Zero => Ok(()),
            Regularizer::L1 { mu } => check_mu(*mu),
            Regularizer::Box { lo, hi } => {
                if lo.len() != n {
                    return Err(Error::shape(n, lo.len()));
                }
                if hi.len() != n {
                    return Err(Error::shape(n, hi.len()));
                }
                for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
                    if l.is_nan() || h.is_nan() || l > h {
                        return Err(Error::param(format!("box bounds empty at {i}")));
                    }
                }
                Ok(())
            }
            Regularizer::Simplex { blocks } => check_blocks(blocks, n),
            Regularizer::SimplexL1 { blocks, mu } => {
                check_mu(*mu)?;
                check_blocks(blocks, n)
            }
        }
    }

    /// Extended-real value; `f64::INFINITY` outside the domain.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { mu } => mu * l1(x),
            Regularizer::Box { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(v, (l, h))| *v >= l - DOMAIN_TOL && *v <= h + DOMAIN_TOL);
                if inside {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::Simplex { blocks } => {
                if blocks_feasible(blocks, x) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::SimplexL1 { blocks, mu } => {
                if blocks_feasible(blocks, x) {
                    mu * l1(x)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.value(x).is_finite()
    }

    /// `prox_{ηg}(v) = argmin_z { η g(z) + ½‖v − z‖² }`.
    pub fn prox(&self, v: &[f64], eta: f64) -> Vec<f64> {
        match self {
            Regularizer::Zero => v.to_vec(),
            Regularizer::L1 { mu } => v.iter().map(|&a| soft_threshold(a, eta * mu)).collect(),
            Regularizer::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(a, (l, h))| a.clamp(*l, *h))
                .collect(),
            Regularizer::Simplex { blocks } => project_blocks(blocks, v, |a| a),
            // ‖z‖₁ is constant on each block simplex, so on the blocks the prox
            // is the plain projection; free coordinates get soft-thresholded.
            Regularizer::SimplexL1 { blocks, mu } => {
                project_blocks(blocks, v, |a| soft_threshold(a, eta * mu))
            }
        }
    }

    /// A point of `dom g`: the block barycenters for simplex kinds, the
    /// projection of the origin otherwise.
    pub fn default_start(&self, n: usize) -> DecisionVector {
        let origin = vec![0.0; n];
        let x = match self {
            Regularizer::Simplex { blocks } | Regularizer::SimplexL1 { blocks, .. } => {
                let mut x = origin;
                for b in blocks {
                    for i in b.range() {
                        x[i] = 1.0 / b.len as f64;
                    }
                }
                x
            }
            _ => self.prox(&origin, 1.0),
        };
        DecisionVector::from(x)
    }

    /// Draws a point of `dom g`. Unbounded coordinates are sampled from
    /// `[-radius, radius]`.
    pub fn sample_point<R: Rng + ?Sized>(&self, n: usize, radius: f64, rng: &mut R) -> Vec<f64> {
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-radius..=radius)).collect();
        match self {
            Regularizer::Zero | Regularizer::L1 { .. } => {}
            Regularizer::Box { lo, hi } => {
                for i in 0..n {
                    let (l, h) = (lo[i].max(-radius), hi[i].min(radius));
                    x[i] = if l < h {
                        rng.random_range(l..=h)
                    } else {
                        lo[i].max(hi[i].min(0.0))
                    };
                }
            }
            Regularizer::Simplex { blocks } | Regularizer::SimplexL1 { blocks, .. } => {
                for b in blocks {
                    // uniform on the simplex via normalized exponentials
                    let mut total = 0.0;
                    for i in b.range() {
                        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                        x[i] = -u.ln();
                        total += x[i];
                    }
                    for i in b.range() {
                        x[i] /= total;
                    }
                }
            }
        }
        x
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu.is_finite() && mu >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("l1 weight must be finite and >= 0, got {mu}")))
    }
}

fn check_blocks(blocks: &[Block], n: usize) -> Result<()> {
    let mut used = vec![false; n];
    for b in blocks {
        if b.len == 0 {
            return Err(Error::param("empty simplex block"));
        }
        if b.start + b.len > n {
            return Err(Error::Range(format!(
                "block {}..{} exceeds dimension {n}",
                b.start,
                b.start + b.len
            )));
        }
        for i in b.range() {
            if used[i] {
                return Err(Error::param(format!("simplex blocks overlap at {i}")));
            }
            used[i] = true;
        }
    }
    Ok(())
}

fn blocks_feasible(blocks: &[Block], x: &[f64]) -> bool {
    blocks.iter().all(|b| {
        let s = &x[b.range()];
        s.iter().all(|v| *v >= -DOMAIN_TOL) && (s.iter().sum::<f64>() - 1.0).abs() <= DOMAIN_TOL
    })
}

fn project_blocks(blocks: &[Block], v: &[f64], free: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|&a| free(a)).collect();
    for b in blocks {
        let p = simplex_projection(&v[b.range()]);
        out[b.range()].copy_from_slice(&p);
    }
    out
}

fn l1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

fn soft_threshold(a: f64, k: f64) -> f64 {
    if a > k {
        a - k
    } else if a < -k {
        a + k
    } else {
        0.0
    }
}

fn simplex_projection(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut p: Vec<f64> = v.iter().map(|&a| (a - theta).max(0.0)).collect();
    // rounding can leave the sum a few ulps off; spread the correction over
    // the support
    let s: f64 = p.iter().sum();
    let support = p.iter().filter(|&&a| a > 0.0).count();
    if support > 0 && (s - 1.0).abs() > 0.0 {
        let corr = (1.0 - s) / support as f64;
        for a in p.iter_mut().filter(|a| **a > 0.0) {
            *a = (*a + corr).max(0.0);
        }
    }
    p
}

/// Euclidean projection onto the unit simplex `{z ≥ 0, Σz = 1}`.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::shape(1, 0));
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::param("simplex projection input is not finite"));
    }
    Ok(simplex_projection(v))
}

fn check_args(g: &Regularizer, x: &[f64], d: &[f64], eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::param(format!("step size must be positive, got {eta}")));
    }
    if d.len() != x.len() {
        return Err(Error::shape(x.len(), d.len()));
    }
    if x.iter().chain(d).any(|a| !a.is_finite()) {
        return Err(Error::param("non-finite point or direction"));
    }
    g.validate(x.len())
}

/// The prox-grad map `T_η^g(x; d) = prox_{ηg}(x − ηd)`.
pub fn prox_grad_map(g: &Regularizer, x: &[f64], d: &[f64], eta: f64) -> Result<DecisionVector> {
    check_args(g, x, d, eta)?;
    Ok(DecisionVector::from(grad_step(g, x, d, eta)))
}

/// The prox residual `P_η^g(x; d) = (x − T_η^g(x; d)) / η`.
pub fn prox_residual(g: &Regularizer, x: &[f64], d: &[f64], eta: f64) -> Result<DecisionVector> {
    check_args(g, x, d, eta)?;
    Ok(DecisionVector::from(residual(g, x, d, eta)))
}

/// `‖P_η^g(x; d)‖²`, the first-order stationarity proxy.
pub fn residual_norm_sq(g: &Regularizer, x: &[f64], d: &[f64], eta: f64) -> Result<f64> {
    let r = prox_residual(g, x, d, eta)?;
    Ok(r.norm_sq())
}

// Unchecked variants for the solver hot loops, where shapes are fixed once.
pub(crate) fn grad_step(g: &Regularizer, x: &[f64], d: &[f64], eta: f64) -> Vec<f64> {
    let v: Vec<f64> = x.iter().zip(d).map(|(a, b)| a - eta * b).collect();
    g.prox(&v, eta)
}

pub(crate) fn residual(g: &Regularizer, x: &[f64], d: &[f64], eta: f64) -> Vec<f64> {
    let t = grad_step(g, x, d, eta);
    x.iter().zip(&t).map(|(a, b)| (a - b) / eta).collect()
}

pub(crate) fn residual_norm(g: &Regularizer, x: &[f64], d: &[f64], eta: f64) -> f64 {
    norm(&residual(g, x, d, eta))
}

/// Step size, window and tolerance shared by both solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    /// step size η
    pub eta: f64,
    /// smoothness constant L of every `f_t` over `dom g`
    pub smoothness: f64,
    /// window length w
    pub window: usize,
    /// inner-loop tolerance numerator δ (the loop exits at `δ / w`)
    pub delta: f64,
    /// oracle noise level σ
    pub sigma: f64,
    /// horizon T
    pub horizon: usize,
    /// safety cap on the total number of prox-grad steps
    pub max_inner: u64,
}

impl StepConfig {
    /// Checks `η ∈ (0, 1/L)`, `δ > 0` and `1 ≤ w ≤ T`.
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return Err(Error::config(format!(
                "smoothness constant must be positive, got {}",
                self.smoothness
            )));
        }
        if !(self.eta > 0.0 && self.eta * self.smoothness < 1.0) {
            return Err(Error::config(format!(
                "step size must satisfy 0 < eta < 1/L = {}, got {}",
                1.0 / self.smoothness,
                self.eta
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.window == 0 || self.window > self.horizon {
            return Err(Error::config(format!(
                "window must satisfy 1 <= w <= T, got w = {}, T = {}",
                self.window, self.horizon
            )));
        }
        if self.max_inner == 0 {
            return Err(Error::config("max_inner must be positive"));
        }
        Ok(())
    }

    /// Exit threshold `δ / w` of the inner loop.
    pub fn exit_tolerance(&self) -> f64 {
        self.delta / self.window as f64
    }
}
