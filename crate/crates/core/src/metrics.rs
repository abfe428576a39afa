//! Regret measures, guarantee evaluators and offline-reduction parameters.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{residual_norm, Regularizer, StepConfig};
use crate::solver::SolverTrace;
use crate::stream::{self, LossStream};
use crate::vector::DecisionVector;

/// Per-round `‖P_η(x_t; ∇S_{t,w}(x_t))‖²` with exact gradients.
pub fn local_residuals(
    iterates: &[DecisionVector],
    stream: &dyn LossStream,
    g: &Regularizer,
    w: usize,
    eta: f64,
) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(Error::param(format!("eta must be positive, got {eta}")));
    }
    if iterates.len() > stream.horizon() {
        return Err(Error::Range(format!(
            "trajectory of {} rounds exceeds stream horizon {}",
            iterates.len(),
            stream.horizon()
        )));
    }
    iterates
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let d = stream::sliding_average_grad(stream, k + 1, w, x)?;
            Ok(residual_norm(g, x, &d, eta).powi(2))
        })
        .collect()
}

/// `Reg_w(T) = Σ_t ‖P_η(x_t; ∇S_{t,w}(x_t))‖²`.
pub fn local_regret(
    iterates: &[DecisionVector],
    stream: &dyn LossStream,
    g: &Regularizer,
    w: usize,
    eta: f64,
) -> Result<f64> {
    Ok(local_residuals(iterates, stream, g, w, eta)?.iter().sum())
}

/// `Σ_t ‖P_η(x_t; ∇f_t(x_t))‖²`.
pub fn classical_regret(
    iterates: &[DecisionVector],
    stream: &dyn LossStream,
    g: &Regularizer,
    eta: f64,
) -> Result<f64> {
    local_regret(iterates, stream, g, 1, eta)
}

/// `(2/w²)(Tδ² + V)`.
pub fn bound_thm_regret_det(horizon: usize, w: usize, delta: f64, variation: f64) -> f64 {
    let w = w as f64;
    2.0 / (w * w) * (horizon as f64 * delta * delta + variation)
}

/// `2w²(g(x₁) + 2M) / ((2 − ηL) η δ²)`.
pub fn bound_thm_queries_det(w: usize, g_x1: f64, m: f64, eta: f64, smoothness: f64, delta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta * smoothness < 1.0) {
        return Err(Error::param(format!(
            "eta must lie in (0, 1/L) = (0, {}), got {eta}",
            1.0 / smoothness
        )));
    }
    let w = w as f64;
    Ok(2.0 * w * w * (g_x1 + 2.0 * m) / ((2.0 - eta * smoothness) * eta * delta * delta))
}

/// `2(T/w²)(δ² + 7σ²) + (6/w²) V`.
pub fn bound_thm_regret_stoch(horizon: usize, w: usize, delta: f64, sigma: f64, variation: f64) -> f64 {
    let w2 = (w * w) as f64;
    2.0 * horizon as f64 / w2 * (delta * delta + 7.0 * sigma * sigma) + 6.0 / w2 * variation
}

/// `2w²(g(x₁) + 2M) / ((1 − η(L+1)) η δ² − σ²)`.
pub fn bound_thm_queries_stoch(
    w: usize,
    g_x1: f64,
    m: f64,
    eta: f64,
    smoothness: f64,
    delta: f64,
    sigma: f64,
) -> Result<f64> {
    if !(eta > 0.0 && eta * (smoothness + 1.0) < 1.0) {
        return Err(Error::config(format!(
            "eta must lie in (0, 1/(L+1)) = (0, {}), got {eta}",
            1.0 / (smoothness + 1.0)
        )));
    }
    let denom = (1.0 - eta * (smoothness + 1.0)) * eta * delta * delta - sigma * sigma;
    if !(denom > 0.0) {
        return Err(Error::config(format!(
            "(1 - eta (L+1)) eta delta^2 - sigma^2 = {denom} is not positive"
        )));
    }
    let w = w as f64;
    Ok(2.0 * w * w * (g_x1 + 2.0 * m) / denom)
}

/// Upper bound on `P(τ_t > K)`:
/// `(h + M) w² / (2 (η(1 − ηL)δ² − 2σ²) K)` with `h = S_t(y¹) + g(y¹)`.
pub fn tail_probability_bound(
    h: f64,
    m: f64,
    w: usize,
    eta: f64,
    smoothness: f64,
    delta: f64,
    sigma: f64,
    k: u64,
) -> Result<f64> {
    let rate = eta * (1.0 - eta * smoothness) * delta * delta - 2.0 * sigma * sigma;
    if !(rate > 0.0) {
        return Err(Error::config(format!(
            "eta (1 - eta L) delta^2 - 2 sigma^2 = {rate} is not positive"
        )));
    }
    if k == 0 {
        return Err(Error::param("K must be >= 1"));
    }
    let w = w as f64;
    Ok(((h + m) * w * w / (2.0 * rate * k as f64)).min(1.0))
}

/// Window and horizon for the offline reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineParams {
    /// `⌈2√((δ² + 7σ² + c)/ε)⌉`
    pub window: usize,
    pub horizon: usize,
    /// `⌈2√((δ² + c)/ε)⌉`, the exact-gradient variant
    pub window_det: usize,
    pub horizon_det: usize,
}

fn ceil_tolerant(v: f64) -> usize {
    // absorb rounding in values that are integers in exact arithmetic
    let r = v.round();
    let c = if (v - r).abs() <= 1e-12 * r.abs().max(1.0) { r } else { v.ceil() };
    (c as usize).max(1)
}

pub fn offline_params(epsilon: f64, delta: f64, sigma: f64, c: f64) -> Result<OfflineParams> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(c >= 0.0 && delta >= 0.0 && sigma >= 0.0) {
        return Err(Error::param("delta, sigma and c must be nonnegative"));
    }
    let w = ceil_tolerant(2.0 * ((delta * delta + 7.0 * sigma * sigma + c) / epsilon).sqrt());
    let wd = ceil_tolerant(2.0 * ((delta * delta + c) / epsilon).sqrt());
    Ok(OfflineParams {
        window: w,
        horizon: 2 * w,
        window_det: wd,
        horizon_det: 2 * wd,
    })
}

/// The explicit constant behind the offline SFO budget,
/// `2w³(g(x₁) + 3M)/σ²`; reported only.
pub fn offline_sfo_budget(w: usize, g_x1: f64, m: f64, sigma: f64) -> f64 {
    let w = w as f64;
    2.0 * w * w * w * (g_x1 + 3.0 * m) / (sigma * sigma)
}

/// Uniform draw from `{w, …, T}`.
pub fn sample_tstar<R: Rng + ?Sized>(w: usize, horizon: usize, rng: &mut R) -> Result<usize> {
    if w == 0 || w > horizon {
        return Err(Error::Range(format!("need 1 <= w <= T, got w = {w}, T = {horizon}")));
    }
    Ok(rng.random_range(w..=horizon))
}

/// Outcome of comparing one measured quantity with its guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(default)]
    pub inputs: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>, measured: f64, bound: f64, tolerance: f64) -> Self {
        BoundReport {
            name: name.into(),
            measured,
            bound,
            slack: bound - measured,
            tolerance,
            passed: measured <= bound + tolerance,
            inputs: BTreeMap::new(),
        }
    }

    /// An exact-equality check expressed as a report with zero tolerance.
    pub fn equality(name: impl Into<String>, measured: f64, expected: f64) -> Self {
        let mut r = BoundReport::new(name, measured, expected, 0.0);
        r.passed = measured == expected;
        r
    }

    pub fn with_input(mut self, key: &str, value: f64) -> Self {
        self.inputs.insert(key.to_string(), value);
        self
    }
}

/// Logged inner steps whose decrease falls short of the requirement by more
/// than `slack`, and the smallest `decrease − required` seen.
pub fn decrease_violations(trace: &SolverTrace, cfg: &StepConfig, slack: f64) -> (usize, f64) {
    let required = crate::solver::required_decrease(cfg);
    let mut count = 0;
    let mut min_margin = f64::INFINITY;
    for d in trace.rounds.iter().flat_map(|r| r.decreases.iter()) {
        let margin = d - required;
        min_margin = min_margin.min(margin);
        if margin < -slack {
            count += 1;
        }
    }
    (count, min_margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Seed;
    use crate::stream::{LinearStream, SignFlipStream};

    #[test]
    fn regret_bound_examples() {
        assert!((bound_thm_regret_det(200, 10, 0.1, 0.0) - 0.04).abs() < 1e-15);
        let base = bound_thm_regret_det(200, 10, 0.1, 0.0);
        assert!((bound_thm_regret_det(200, 10, 0.1, 200.0 * 0.01) - 2.0 * base).abs() < 1e-14);
        assert!((bound_thm_regret_stoch(200, 10, 1.5, 0.3, 0.0) - 11.52).abs() < 1e-12);
    }

    #[test]
    fn query_bound_examples() {
        let b = bound_thm_queries_det(1, 0.0, 0.5, 0.5, 1.0, 0.1).unwrap();
        assert!((b - 2.0 / (1.5 * 0.5 * 0.01)).abs() < 1e-9);
        assert!((b - 266.666_666_666_666_6).abs() < 1e-9);
        let b2 = bound_thm_queries_det(3, 0.0, 0.5, 0.5, 1.0, 0.1).unwrap();
        assert!((b2 / b - 9.0).abs() < 1e-12);
        assert!(bound_thm_queries_det(1, 0.0, 0.5, 1.0, 1.0, 0.1).is_err());
        assert!(bound_thm_queries_det(1, 0.0, 0.5, 0.5, 1.0, 1e12).unwrap() < 1e-20);

        // σ = 0 gives the same shape with (1 − η(L+1))η in the denominator
        let s = bound_thm_queries_stoch(2, 0.1, 0.5, 0.2, 1.0, 0.5, 0.0).unwrap();
        let expect = 2.0 * 4.0 * (0.1 + 1.0) / ((1.0 - 0.2 * 2.0) * 0.2 * 0.25);
        assert!((s - expect).abs() < 1e-9 * expect);
        assert!(bound_thm_queries_stoch(2, 0.1, 0.5, 0.2, 1.0, 0.5, 10.0).is_err());
        assert!(bound_thm_queries_stoch(2, 0.1, 0.5, 0.5, 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn offline_parameter_examples() {
        let p = offline_params(0.04, 0.1, 0.0, 0.0).unwrap();
        assert_eq!((p.window, p.horizon), (1, 2));
        assert_eq!((p.window_det, p.horizon_det), (1, 2));
        let mut last = 0;
        for k in 1..12 {
            let eps = 0.5f64.powi(k);
            let w = offline_params(eps, 0.3, 0.2, 0.1).unwrap().window;
            assert!(w >= last);
            last = w;
        }
        assert!(offline_params(0.0, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn tstar_range() {
        let mut rng = Seed(5).rng();
        for _ in 0..100 {
            assert_eq!(sample_tstar(4, 4, &mut rng).unwrap(), 4);
            let t = sample_tstar(3, 9, &mut rng).unwrap();
            assert!((3..=9).contains(&t));
        }
        assert!(sample_tstar(5, 4, &mut rng).is_err());
    }

    #[test]
    fn unconstrained_w1_regret_is_gradient_energy() {
        let s = LinearStream::new(vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 4.0]], 10.0).unwrap();
        let xs = vec![DecisionVector::zeros(2); 3];
        let r = local_regret(&xs, &s, &Regularizer::Zero, 1, 0.3).unwrap();
        assert!((r - (5.0 + 9.25 + 16.0)).abs() < 1e-12);
        assert_eq!(r, classical_regret(&xs, &s, &Regularizer::Zero, 0.3).unwrap());
    }

    #[test]
    fn sign_flip_fixed_policy_counts_inward_rounds() {
        let s = SignFlipStream::new(100, Seed(42)).unwrap();
        let g = SignFlipStream::domain();
        let xs = vec![DecisionVector::from(vec![1.0]); 100];
        // at x = +1 a gradient of +1 points into the interval, residual 1
        let expected = s.signs().iter().filter(|v| **v > 0.0).count() as f64;
        for eta in [0.1, 0.5, 1.0] {
            let r = classical_regret(&xs, &s, &g, eta).unwrap();
            assert!((r - expected).abs() < 1e-12, "eta {eta}: {r} vs {expected}");
        }
    }

    #[test]
    fn horizon_mismatch_is_range_error() {
        let s = SignFlipStream::new(3, Seed(1)).unwrap();
        let xs = vec![DecisionVector::zeros(1); 4];
        assert!(matches!(
            local_regret(&xs, &s, &Regularizer::Zero, 1, 0.5),
            Err(Error::Range(_))
        ));
    }
}
