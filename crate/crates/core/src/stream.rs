//! Online loss streams `f_1, …, f_T` and sliding-window averages.
//!
//! Function indices are signed: `f_i ≡ 0` for every `i ≤ 0`.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::oracle::{DrawKey, NoiseModel, Seed};
use crate::prox::Regularizer;
use crate::vector::{axpy, dist_sq, dot, norm, DecisionVector};

/// Smooth parts `f_t` of an online composite problem.
///
/// Implementors evaluate `f_t` for `1 ≤ t ≤ horizon()`; callers go through
/// [`value`] and [`grad`], which handle `t ≤ 0` and the reveal guard.
pub trait LossStream: Send + Sync {
    fn dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Smoothness constant `L` over `dom g`.
    fn smoothness(&self) -> f64;
    /// Bound `M ≥ |f_t(x)|` over `dom g`.
    fn bound(&self) -> f64;
    fn descriptor(&self) -> String;
    fn value_at(&self, t: usize, x: &[f64]) -> f64;
    fn grad_at(&self, t: usize, x: &[f64]) -> Vec<f64>;

    /// Number of rounds whose loss is already determined.
    fn revealed(&self) -> usize {
        self.horizon()
    }
}

fn check_index(stream: &dyn LossStream, i: i64, x: &[f64]) -> Result<Option<usize>> {
    if x.len() != stream.dim() {
        return Err(Error::shape(stream.dim(), x.len()));
    }
    if i <= 0 {
        return Ok(None);
    }
    let i = i as usize;
    if i > stream.horizon() {
        return Err(Error::Range(format!(
            "round {i} beyond horizon {}",
            stream.horizon()
        )));
    }
    if i > stream.revealed() {
        return Err(Error::Protocol(format!(
            "f_{i} queried before it was revealed (revealed through {})",
            stream.revealed()
        )));
    }
    Ok(Some(i))
}

/// `f_i(x)`, zero for `i ≤ 0`.
pub fn value(stream: &dyn LossStream, i: i64, x: &[f64]) -> Result<f64> {
    Ok(match check_index(stream, i, x)? {
        Some(i) => stream.value_at(i, x),
        None => 0.0,
    })
}

/// `∇f_i(x)`, zero for `i ≤ 0`.
pub fn grad(stream: &dyn LossStream, i: i64, x: &[f64]) -> Result<DecisionVector> {
    Ok(match check_index(stream, i, x)? {
        Some(i) => DecisionVector::from(stream.grad_at(i, x)),
        None => DecisionVector::zeros(x.len()),
    })
}

fn check_round(stream: &dyn LossStream, t: usize, w: usize) -> Result<()> {
    if t == 0 || t > stream.horizon() {
        return Err(Error::Range(format!(
            "round {t} outside 1..={}",
            stream.horizon()
        )));
    }
    if w == 0 {
        return Err(Error::param("window must be >= 1"));
    }
    Ok(())
}

/// `∇S_{t,w}(x) = (1/w) Σ_{i=t−w+1..t} ∇f_i(x)`.
pub fn sliding_average_grad(
    stream: &dyn LossStream,
    t: usize,
    w: usize,
    x: &[f64],
) -> Result<DecisionVector> {
    check_round(stream, t, w)?;
    let mut acc = vec![0.0; x.len()];
    let first = t as i64 - w as i64 + 1;
    for i in first.max(1)..=t as i64 {
        let g = grad(stream, i, x)?;
        axpy(1.0, &g, &mut acc);
    }
    let inv = 1.0 / w as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    Ok(DecisionVector::from(acc))
}

/// `S_{t,w}(x)`.
pub fn sliding_average_value(stream: &dyn LossStream, t: usize, w: usize, x: &[f64]) -> Result<f64> {
    check_round(stream, t, w)?;
    let first = t as i64 - w as i64 + 1;
    let mut acc = 0.0;
    for i in first.max(1)..=t as i64 {
        acc += value(stream, i, x)?;
    }
    Ok(acc / w as f64)
}

/// `Σ_t ‖∇f_t(x_t) − ∇f_{t−w}(x_t)‖²` along the played points `x_1, x_2, …`.
pub fn trajectory_variation(
    iterates: &[DecisionVector],
    stream: &dyn LossStream,
    w: usize,
) -> Result<f64> {
    if w == 0 {
        return Err(Error::param("window must be >= 1"));
    }
    if iterates.len() > stream.horizon() {
        return Err(Error::Range(format!(
            "trajectory of {} rounds exceeds stream horizon {}",
            iterates.len(),
            stream.horizon()
        )));
    }
    let mut total = 0.0;
    for (k, x) in iterates.iter().enumerate() {
        let t = k as i64 + 1;
        let a = grad(stream, t, x)?;
        let b = grad(stream, t - w as i64, x)?;
        total += dist_sq(&a, &b);
    }
    Ok(total)
}

/// Lower estimate of `sup_x Σ_t ‖∇f_t(x) − ∇f_{t−w}(x)‖²` by sampling
/// `dom g`; reported only, never asserted against.
pub fn sampled_variation_sup(
    stream: &dyn LossStream,
    g: &Regularizer,
    w: usize,
    radius: f64,
    samples: usize,
    seed: Seed,
) -> Result<f64> {
    let mut rng = seed.rng();
    let n = stream.dim();
    let mut best = 0.0f64;
    for _ in 0..samples {
        let x = g.sample_point(n, radius, &mut rng);
        let mut total = 0.0;
        for t in 1..=stream.horizon() as i64 {
            let a = grad(stream, t, &x)?;
            let b = grad(stream, t - w as i64, &x)?;
            total += dist_sq(&a, &b);
        }
        best = best.max(total);
    }
    Ok(best)
}

/// Largest observed `‖∇f_t(x) − ∇f_t(y)‖ / ‖x − y‖` over random pairs.
pub fn max_smoothness_ratio(
    stream: &dyn LossStream,
    g: &Regularizer,
    radius: f64,
    pairs: usize,
    seed: Seed,
) -> f64 {
    let mut rng = seed.rng();
    let n = stream.dim();
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let t = rng.random_range(1..=stream.horizon());
        let x = g.sample_point(n, radius, &mut rng);
        let y = g.sample_point(n, radius, &mut rng);
        let d = dist_sq(&x, &y).sqrt();
        if d == 0.0 {
            continue;
        }
        let gx = stream.grad_at(t, &x);
        let gy = stream.grad_at(t, &y);
        worst = worst.max(dist_sq(&gx, &gy).sqrt() / d);
    }
    worst
}

/// Largest observed `|f_t(x)|` over random domain points.
pub fn max_abs_value(
    stream: &dyn LossStream,
    g: &Regularizer,
    radius: f64,
    points: usize,
    seed: Seed,
) -> f64 {
    let mut rng = seed.rng();
    let n = stream.dim();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let t = rng.random_range(1..=stream.horizon());
        let x = g.sample_point(n, radius, &mut rng);
        worst = worst.max(stream.value_at(t, &x).abs());
    }
    worst
}

/// Per-function gradient estimates held at one anchor point, and their mean.
///
/// Slot `i` holds an estimate of `∇f_i(anchor)`; the aggregate tracks
/// `(1/w) Σ` over the buffered slots.
#[derive(Debug, Clone)]
pub struct WindowState {
    window: usize,
    entries: VecDeque<(i64, Vec<f64>)>,
    aggregate: Vec<f64>,
}

impl WindowState {
    pub fn new(window: usize, dim: usize) -> Self {
        WindowState {
            window,
            entries: VecDeque::with_capacity(window + 1),
            aggregate: vec![0.0; dim],
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn aggregate(&self) -> &[f64] {
        &self.aggregate
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Buffered estimate for `f_i`, if present. `f_i` with `i ≤ 0` is zero.
    pub fn get(&self, i: i64) -> Option<Vec<f64>> {
        if i <= 0 {
            return Some(vec![0.0; self.aggregate.len()]);
        }
        self.entries
            .iter()
            .find(|(j, _)| *j == i)
            .map(|(_, v)| v.clone())
    }

    /// Incremental update `G ← G + (1/w)(new − old)`, where `old` is the
    /// estimate for `f_{i−w}`. The slot for `i − w` is evicted.
    pub fn advance(&mut self, i: i64, estimate: Vec<f64>, old: &[f64]) {
        let inv = 1.0 / self.window as f64;
        for ((a, n), o) in self.aggregate.iter_mut().zip(&estimate).zip(old) {
            *a += inv * (n - o);
        }
        self.entries.retain(|(j, _)| *j > i - self.window as i64);
        self.entries.push_back((i, estimate));
    }

    /// Replaces the buffer with fresh estimates at a new anchor and sets the
    /// aggregate to their mean over the full window.
    pub fn reset(&mut self, estimates: Vec<(i64, Vec<f64>)>) {
        let inv = 1.0 / self.window as f64;
        self.aggregate.iter_mut().for_each(|a| *a = 0.0);
        for (_, v) in &estimates {
            axpy(inv, v, &mut self.aggregate);
        }
        self.entries = estimates.into_iter().filter(|(i, _)| *i > 0).collect();
    }

    /// `(1/w) Σ` of the buffered estimates, computed from scratch.
    pub fn recomputed_mean(&self) -> Vec<f64> {
        let inv = 1.0 / self.window as f64;
        let mut acc = vec![0.0; self.aggregate.len()];
        for (_, v) in &self.entries {
            axpy(inv, v, &mut acc);
        }
        acc
    }
}

/// `f_t(x) = ½ xᵀA_t x + b_tᵀx` with `A_t = A₀ + s(t)A₁`, `b_t = b₀ + s(t)b₁`
/// and `s(t) = sin(2πt / period)`.
///
/// Constants are taken over the box `[-radius, radius]ⁿ`: `L = max_t ‖A_t‖₂`
/// exactly, and `M` from the coefficient-wise bound
/// `½ Σ|A_t,ij| r² + Σ|b_t,i| r`, which dominates `|f_t|` on the box.
#[derive(Debug, Clone)]
pub struct QuadraticDriftStream {
    n: usize,
    horizon: usize,
    period: Option<f64>,
    a0: Vec<f64>,
    a1: Vec<f64>,
    b0: Vec<f64>,
    b1: Vec<f64>,
    radius: f64,
    smoothness: f64,
    bound: f64,
}

impl QuadraticDriftStream {
    /// Seeded indefinite instance. `period = None` gives an offline stream.
    pub fn new(n: usize, horizon: usize, period: Option<f64>, seed: Seed, radius: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("dimension must be >= 1"));
        }
        let mut rng = seed.derive(0x9d).rng();
        let scale = 1.0 / (n as f64).sqrt();
        let mut sym = |amp: f64| {
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v: f64 = amp * scale * rng.sample::<f64, _>(StandardNormal);
                    a[i * n + j] = v;
                    a[j * n + i] = v;
                }
            }
            a
        };
        let a0 = sym(1.0);
        let a1 = sym(0.5);
        let b0: Vec<f64> = (0..n).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let b1: Vec<f64> = (0..n).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        Self::from_parts(a0, a1, b0, b1, period, horizon, radius)
    }

    /// `f_t(x) = ½‖x‖²` for every `t`, over the unit box.
    pub fn isotropic(n: usize, horizon: usize) -> Self {
        let mut a0 = vec![0.0; n * n];
        for i in 0..n {
            a0[i * n + i] = 1.0;
        }
        Self::from_parts(a0, vec![0.0; n * n], vec![0.0; n], vec![0.0; n], None, horizon, 1.0)
            .expect("valid isotropic instance")
    }

    /// Builds a stream from row-major symmetric matrices.
    pub fn from_parts(
        a0: Vec<f64>,
        a1: Vec<f64>,
        b0: Vec<f64>,
        b1: Vec<f64>,
        period: Option<f64>,
        horizon: usize,
        radius: f64,
    ) -> Result<Self> {
        let n = b0.len();
        if n == 0 || horizon == 0 {
            return Err(Error::param("dimension and horizon must be >= 1"));
        }
        for m in [&a0, &a1] {
            if m.len() != n * n {
                return Err(Error::shape(n * n, m.len()));
            }
            for i in 0..n {
                for j in 0..n {
                    if m[i * n + j] != m[j * n + i] {
                        return Err(Error::param("quadratic coefficients must be symmetric"));
                    }
                }
            }
        }
        if b1.len() != n {
            return Err(Error::shape(n, b1.len()));
        }
        if let Some(p) = period {
            if !(p > 0.0) {
                return Err(Error::param(format!("drift period must be positive, got {p}")));
            }
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::param(format!("radius must be positive, got {radius}")));
        }
        let mut s = QuadraticDriftStream {
            n,
            horizon,
            period,
            a0,
            a1,
            b0,
            b1,
            radius,
            smoothness: 0.0,
            bound: 0.0,
        };
        let rounds: Vec<usize> = if period.is_some() { (1..=horizon).collect() } else { vec![1] };
        let mut l = 0.0f64;
        let mut m = 0.0f64;
        for t in rounds {
            let (a, b) = s.coefficients(t);
            let eig = DMatrix::from_row_slice(n, n, &a).symmetric_eigenvalues();
            l = l.max(eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
            let quad: f64 = a.iter().map(|v| v.abs()).sum::<f64>() * radius * radius / 2.0;
            let lin: f64 = b.iter().map(|v| v.abs()).sum::<f64>() * radius;
            m = m.max(quad + lin);
        }
        // L > 0 is required for step-size validity even for linear instances
        s.smoothness = if l > 0.0 { l } else { 1.0 };
        s.bound = m;
        Ok(s)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// The box `[-radius, radius]ⁿ` the constants were computed over.
    pub fn domain(&self) -> Regularizer {
        Regularizer::uniform_box(self.n, -self.radius, self.radius)
    }

    fn drift(&self, t: usize) -> f64 {
        match self.period {
            Some(p) => (2.0 * PI * t as f64 / p).sin(),
            None => 0.0,
        }
    }

    /// `(A_t, b_t)`, `A_t` row-major.
    pub fn coefficients(&self, t: usize) -> (Vec<f64>, Vec<f64>) {
        let s = self.drift(t);
        let a = self.a0.iter().zip(&self.a1).map(|(p, q)| p + s * q).collect();
        let b = self.b0.iter().zip(&self.b1).map(|(p, q)| p + s * q).collect();
        (a, b)
    }
}

impl LossStream for QuadraticDriftStream {
    fn dim(&self) -> usize {
        self.n
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn smoothness(&self) -> f64 {
        self.smoothness
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn descriptor(&self) -> String {
        match self.period {
            Some(p) => format!("quadratic_drift(n={}, T={}, period={p})", self.n, self.horizon),
            None => format!("quadratic_drift(n={}, T={}, offline)", self.n, self.horizon),
        }
    }
    fn value_at(&self, t: usize, x: &[f64]) -> f64 {
        let (a, b) = self.coefficients(t);
        let n = self.n;
        let mut q = 0.0;
        for i in 0..n {
            q += x[i] * dot(&a[i * n..(i + 1) * n], x);
        }
        0.5 * q + dot(&b, x)
    }
    fn grad_at(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let (a, b) = self.coefficients(t);
        let n = self.n;
        (0..n).map(|i| dot(&a[i * n..(i + 1) * n], x) + b[i]).collect()
    }
}

/// `f_t(x) = s_t x` with i.i.d. fair signs `s_t ∈ {−1, +1}`, played on
/// `[-1, 1]`. The losses are linear; `L = 1` is stored so that step sizes
/// `η < 1/L` remain meaningful.
#[derive(Debug, Clone)]
pub struct SignFlipStream {
    signs: Vec<f64>,
}

impl SignFlipStream {
    pub fn new(horizon: usize, seed: Seed) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::param("horizon must be >= 1"));
        }
        let mut rng = seed.derive(0x51).rng();
        let signs = (0..horizon)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(SignFlipStream { signs })
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn domain() -> Regularizer {
        Regularizer::uniform_box(1, -1.0, 1.0)
    }
}

impl LossStream for SignFlipStream {
    fn dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        self.signs.len()
    }
    fn smoothness(&self) -> f64 {
        1.0
    }
    fn bound(&self) -> f64 {
        1.0
    }
    fn descriptor(&self) -> String {
        format!("sign_flip(T={})", self.signs.len())
    }
    fn value_at(&self, t: usize, x: &[f64]) -> f64 {
        self.signs[t - 1] * x[0]
    }
    fn grad_at(&self, t: usize, _x: &[f64]) -> Vec<f64> {
        vec![self.signs[t - 1]]
    }
}

/// `f_t(x) = ⟨c_t, x⟩` on a set of Euclidean radius `radius`.
#[derive(Debug, Clone)]
pub struct LinearStream {
    coeffs: Vec<Vec<f64>>,
    radius: f64,
}

impl LinearStream {
    pub fn new(coeffs: Vec<Vec<f64>>, radius: f64) -> Result<Self> {
        let n = coeffs.first().map(Vec::len).unwrap_or(0);
        if n == 0 {
            return Err(Error::param("need at least one round of dimension >= 1"));
        }
        if let Some(c) = coeffs.iter().find(|c| c.len() != n) {
            return Err(Error::shape(n, c.len()));
        }
        Ok(LinearStream { coeffs, radius })
    }
}

impl LossStream for LinearStream {
    fn dim(&self) -> usize {
        self.coeffs[0].len()
    }
    fn horizon(&self) -> usize {
        self.coeffs.len()
    }
    fn smoothness(&self) -> f64 {
        1.0
    }
    fn bound(&self) -> f64 {
        self.coeffs.iter().map(|c| norm(c)).fold(0.0, f64::max) * self.radius
    }
    fn descriptor(&self) -> String {
        format!("linear(n={}, T={})", self.dim(), self.horizon())
    }
    fn value_at(&self, t: usize, x: &[f64]) -> f64 {
        dot(&self.coeffs[t - 1], x)
    }
    fn grad_at(&self, t: usize, _x: &[f64]) -> Vec<f64> {
        self.coeffs[t - 1].clone()
    }
}

/// `f_t(x) = f(x) + ⟨ξ_t, x⟩` with zero-mean i.i.d. `ξ_t`, so `E f_t = f`.
///
/// `f` is the first function of an offline base stream. Realizations are
/// drawn once at construction; `domain_norm` bounds `‖x‖` over `dom g` and
/// enters `M`.
#[derive(Clone)]
pub struct StationaryStochasticStream {
    base: Arc<dyn LossStream>,
    shifts: Vec<Vec<f64>>,
    bound: f64,
}

impl StationaryStochasticStream {
    pub fn new(
        base: Arc<dyn LossStream>,
        noise: NoiseModel,
        horizon: usize,
        seed: Seed,
        domain_norm: f64,
    ) -> Result<Self> {
        noise.validate()?;
        if horizon == 0 {
            return Err(Error::param("horizon must be >= 1"));
        }
        let n = base.dim();
        let shifts: Vec<Vec<f64>> = (1..=horizon as u64)
            .map(|t| noise.draw(seed, DrawKey { round: t, inner: 0, slot: 0 }, n))
            .collect();
        let max_shift = shifts.iter().map(|s| norm(s)).fold(0.0, f64::max);
        let bound = base.bound() + max_shift * domain_norm;
        Ok(StationaryStochasticStream { base, shifts, bound })
    }

    pub fn shift(&self, t: usize) -> &[f64] {
        &self.shifts[t - 1]
    }
}

impl LossStream for StationaryStochasticStream {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn horizon(&self) -> usize {
        self.shifts.len()
    }
    fn smoothness(&self) -> f64 {
        self.base.smoothness()
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn descriptor(&self) -> String {
        format!("stationary({}, T={})", self.base.descriptor(), self.shifts.len())
    }
    fn value_at(&self, t: usize, x: &[f64]) -> f64 {
        self.base.value_at(1, x) + dot(&self.shifts[t - 1], x)
    }
    fn grad_at(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let mut g = self.base.grad_at(1, x);
        axpy(1.0, &self.shifts[t - 1], &mut g);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_linear(horizon: usize) -> LinearStream {
        // f_i(x) = i·x
        LinearStream::new((1..=horizon).map(|i| vec![i as f64]).collect(), 1.0).unwrap()
    }

    #[test]
    fn sliding_average_of_constants() {
        let s = scalar_linear(6);
        let g = sliding_average_grad(&s, 5, 3, &[0.3]).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn early_rounds_see_zero_functions() {
        let s = LinearStream::new(vec![vec![2.5], vec![1.0]], 1.0).unwrap();
        let g = sliding_average_grad(&s, 1, 3, &[0.0]).unwrap();
        assert!((g[0] - 2.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn offline_average_equals_gradient() {
        let s = QuadraticDriftStream::new(4, 20, None, Seed(3), 1.0).unwrap();
        let x = [0.1, -0.4, 0.9, 0.0];
        let exact = s.grad_at(1, &x);
        for t in 5..=20 {
            let g = sliding_average_grad(&s, t, 5, &x).unwrap();
            for (a, b) in g.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn round_out_of_horizon() {
        let s = scalar_linear(4);
        assert!(matches!(sliding_average_grad(&s, 5, 2, &[0.0]), Err(Error::Range(_))));
        assert!(matches!(sliding_average_grad(&s, 0, 2, &[0.0]), Err(Error::Range(_))));
        assert!(matches!(grad(&s, 9, &[0.0]), Err(Error::Range(_))));
        assert_eq!(grad(&s, -3, &[0.0]).unwrap().as_slice(), &[0.0]);
        assert_eq!(value(&s, 0, &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn variation_of_offline_stream_comes_from_first_window() {
        let s = QuadraticDriftStream::new(3, 12, None, Seed(1), 1.0).unwrap();
        let xs: Vec<DecisionVector> = (0..12)
            .map(|k| DecisionVector::from(vec![0.05 * k as f64, -0.1, 0.2]))
            .collect();
        let w = 4;
        let v = trajectory_variation(&xs, &s, w).unwrap();
        let head: f64 = xs[..w]
            .iter()
            .map(|x| norm(&s.grad_at(1, x)).powi(2))
            .sum();
        assert!((v - head).abs() < 1e-12);
    }

    #[test]
    fn variation_of_linear_stream_ignores_trajectory() {
        let s = scalar_linear(10);
        let a: Vec<DecisionVector> = (0..10).map(|_| DecisionVector::from(vec![0.0])).collect();
        let b: Vec<DecisionVector> =
            (0..10).map(|k| DecisionVector::from(vec![k as f64])).collect();
        let w = 3;
        let direct: f64 = (1..=10i64)
            .map(|t| {
                let prev = if t - w > 0 { (t - w) as f64 } else { 0.0 };
                (t as f64 - prev).powi(2)
            })
            .sum();
        assert!((trajectory_variation(&a, &s, w as usize).unwrap() - direct).abs() < 1e-12);
        assert!((trajectory_variation(&b, &s, w as usize).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn variation_rejects_long_trace() {
        let s = scalar_linear(2);
        let xs = vec![DecisionVector::zeros(1); 3];
        assert!(matches!(trajectory_variation(&xs, &s, 1), Err(Error::Range(_))));
    }

    #[test]
    fn constant_quadratic_gradient() {
        let a = vec![2.0, 1.0, 1.0, -3.0];
        let b = vec![0.5, -1.0];
        let s = QuadraticDriftStream::from_parts(
            a,
            vec![0.0; 4],
            b,
            vec![0.0; 2],
            None,
            5,
            1.0,
        )
        .unwrap();
        let g = s.grad_at(3, &[1.0, 2.0]);
        assert_eq!(g, vec![2.0 + 2.0 + 0.5, 1.0 - 6.0 - 1.0]);
        assert!((s.smoothness() - (1.0 + 29f64.sqrt()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sign_flip_is_reproducible() {
        let a = SignFlipStream::new(50, Seed(4)).unwrap();
        let b = SignFlipStream::new(50, Seed(4)).unwrap();
        assert_eq!(a.signs(), b.signs());
        assert!(a.signs().iter().all(|s| s.abs() == 1.0));
        for t in 1..=50 {
            assert_eq!(a.grad_at(t, &[0.3])[0].abs(), 1.0);
        }
    }

    #[test]
    fn stationary_stream_zero_noise_is_offline() {
        let base: Arc<dyn LossStream> =
            Arc::new(QuadraticDriftStream::new(3, 1, None, Seed(2), 1.0).unwrap());
        let s = StationaryStochasticStream::new(base.clone(), NoiseModel::Exact, 8, Seed(5), 2.0)
            .unwrap();
        let x = [0.2, 0.1, -0.7];
        for t in 1..=8 {
            assert_eq!(s.grad_at(t, &x), base.grad_at(1, &x));
            assert_eq!(s.value_at(t, &x), base.value_at(1, &x));
        }
    }

    #[test]
    fn window_state_tracks_mean() {
        let mut ws = WindowState::new(3, 2);
        ws.reset(vec![(-1, vec![0.0, 0.0]), (0, vec![0.0, 0.0]), (1, vec![3.0, 0.0])]);
        assert_eq!(ws.aggregate(), &[1.0, 0.0]);
        let old = ws.get(-1).unwrap();
        ws.advance(2, vec![0.0, 3.0], &old);
        let old = ws.get(0).unwrap();
        ws.advance(3, vec![3.0, 3.0], &old);
        assert_eq!(ws.len(), 3);
        let m = ws.recomputed_mean();
        for (a, b) in ws.aggregate().iter().zip(&m) {
            assert!((a - b).abs() < 1e-12);
        }
        let old = ws.get(1).unwrap();
        ws.advance(4, vec![0.0, 0.0], &old);
        assert!(ws.get(1).is_none());
        assert_eq!(ws.len(), 3);
    }
}
