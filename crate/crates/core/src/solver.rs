//! The deterministic and stochastic time-smoothed online prox-grad methods.
//!
//! Both solvers are written as round-by-round runners so that a driver can
//! interleave several of them (see [`crate::games`]); [`run_alg1`] and
//! [`run_alg2`] simply loop a runner over `t = 1, …, T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::oracle::{NoiseModel, Seed, StochasticOracle};
use crate::prox::{grad_step, residual_norm, Regularizer, StepConfig};
use crate::stream::{self, LossStream, WindowState};
use crate::vector::DecisionVector;

/// Slack allowed on the per-step sufficient-decrease inequality.
pub const DECREASE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// exact gradients of the sliding average
    Alg1,
    /// stochastic first-order oracle queried at `σ / w`
    Alg2,
}

/// What happened at round `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// the point `x_t` played at this round
    pub x: DecisionVector,
    /// prox-grad steps performed by the inner loop
    pub tau: u64,
    /// `‖P_η(x_{t+1}; d)‖` for the direction `d` used by the final exit test
    pub residual_at_exit: f64,
    /// the direction `d` of the final exit test
    pub exit_direction: DecisionVector,
    /// oracle calls consumed during this round
    pub oracle_calls: u64,
    /// per-step `S_t(y) + g(y) − S_t(y⁺) − g(y⁺)`; exact-gradient runs only
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decreases: Vec<f64>,
}

/// Complete record of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub solver: SolverKind,
    pub window: usize,
    pub eta: f64,
    pub delta: f64,
    pub smoothness: f64,
    pub rounds: Vec<RoundRecord>,
    /// `x_{T+1}`
    pub final_x: DecisionVector,
    pub tau: u64,
    pub sfo_calls: u64,
}

impl SolverTrace {
    fn new(kind: SolverKind, cfg: &StepConfig, x1: &DecisionVector) -> Self {
        SolverTrace {
            solver: kind,
            window: cfg.window,
            eta: cfg.eta,
            delta: cfg.delta,
            smoothness: cfg.smoothness,
            rounds: Vec::with_capacity(cfg.horizon),
            final_x: x1.clone(),
            tau: 0,
            sfo_calls: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.rounds.len()
    }

    /// The played points `x_1, …, x_T`.
    pub fn iterates(&self) -> Vec<DecisionVector> {
        self.rounds.iter().map(|r| r.x.clone()).collect()
    }

    pub fn start(&self) -> &DecisionVector {
        self.rounds.first().map(|r| &r.x).unwrap_or(&self.final_x)
    }
}

/// Whether the inner-loop decrease inequality is enforced during the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecreaseCheck {
    /// only record the per-step decreases
    Log,
    /// fail with [`Error::Invariant`] on the first violating step
    Enforce,
}

/// Required per-step decrease `(η − η²L/2) δ² / w²`.
pub fn required_decrease(cfg: &StepConfig) -> f64 {
    let w = cfg.window as f64;
    (cfg.eta - cfg.eta * cfg.eta * cfg.smoothness / 2.0) * cfg.delta * cfg.delta / (w * w)
}

fn check_start(stream: &dyn LossStream, g: &Regularizer, cfg: &StepConfig, x1: &[f64]) -> Result<()> {
    cfg.validate()?;
    if x1.len() != stream.dim() {
        return Err(Error::shape(stream.dim(), x1.len()));
    }
    g.validate(stream.dim())?;
    if cfg.horizon > stream.horizon() {
        return Err(Error::Range(format!(
            "configured horizon {} exceeds the stream's {}",
            cfg.horizon,
            stream.horizon()
        )));
    }
    if !g.contains(x1) {
        return Err(Error::Domain("starting point is outside dom g".into()));
    }
    Ok(())
}

/// Round-by-round state of the deterministic method.
#[derive(Debug, Clone)]
pub struct Alg1Runner {
    g: Regularizer,
    cfg: StepConfig,
    check: DecreaseCheck,
    x: DecisionVector,
    last_round: usize,
    trace: SolverTrace,
}

impl Alg1Runner {
    pub fn new(
        stream: &dyn LossStream,
        g: &Regularizer,
        cfg: &StepConfig,
        x1: &DecisionVector,
        check: DecreaseCheck,
    ) -> Result<Self> {
        check_start(stream, g, cfg, x1)?;
        Ok(Alg1Runner {
            g: g.clone(),
            cfg: cfg.clone(),
            check,
            x: x1.clone(),
            last_round: 0,
            trace: SolverTrace::new(SolverKind::Alg1, cfg, x1),
        })
    }

    /// The point `x_t` to be played at the next round.
    pub fn current(&self) -> &DecisionVector {
        &self.x
    }

    pub fn trace(&self) -> &SolverTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SolverTrace {
        self.trace
    }

    fn capped(&self, round: usize) -> Error {
        Error::Capped {
            round,
            tau: self.trace.tau,
            partial: Box::new(self.trace.clone()),
        }
    }

    /// Plays round `t`: the loss `f_t` is revealed, then the inner loop runs
    /// prox-grad steps on `S_{t,w}` until `‖P_η(x; ∇S_{t,w}(x))‖ ≤ δ/w`.
    pub fn step(&mut self, stream: &dyn LossStream, t: usize) -> Result<()> {
        if t != self.last_round + 1 {
            return Err(Error::Protocol(format!(
                "round {t} played after round {}",
                self.last_round
            )));
        }
        if t > stream.revealed() {
            return Err(Error::Protocol(format!("round {t} played before f_{t} was revealed")));
        }
        let w = self.cfg.window;
        let eta = self.cfg.eta;
        let tol = self.cfg.exit_tolerance();
        let required = required_decrease(&self.cfg);
        let played = self.x.clone();
        let mut y = self.x.clone();
        let mut tau_t = 0u64;
        let mut decreases = Vec::new();
        let (exit_direction, residual) = loop {
            let d = stream::sliding_average_grad(stream, t, w, &y)?;
            let r = residual_norm(&self.g, &y, &d, eta);
            // ties exit: the loop runs only while the residual exceeds δ/w
            if r <= tol {
                break (d, r);
            }
            if self.trace.tau >= self.cfg.max_inner {
                self.x = y;
                return Err(self.capped(t));
            }
            let next = DecisionVector::from(grad_step(&self.g, &y, &d, eta));
            let before = stream::sliding_average_value(stream, t, w, &y)? + self.g.value(&y);
            let after = stream::sliding_average_value(stream, t, w, &next)? + self.g.value(&next);
            let dec = before - after;
            if self.check == DecreaseCheck::Enforce && dec < required - DECREASE_SLACK {
                return Err(Error::Invariant(format!(
                    "round {t}, step {}: decrease {dec:e} below required {required:e}",
                    tau_t + 1
                )));
            }
            decreases.push(dec);
            y = next;
            tau_t += 1;
            self.trace.tau += 1;
        };
        self.trace.rounds.push(RoundRecord {
            round: t,
            x: played,
            tau: tau_t,
            residual_at_exit: residual,
            exit_direction,
            oracle_calls: 0,
            decreases,
        });
        self.x = y;
        self.trace.final_x = self.x.clone();
        self.last_round = t;
        Ok(())
    }
}

/// Runs the deterministic method for `cfg.horizon` rounds, enforcing the
/// per-step sufficient decrease.
pub fn run_alg1(
    stream: &dyn LossStream,
    g: &Regularizer,
    cfg: &StepConfig,
    x1: &DecisionVector,
) -> Result<SolverTrace> {
    run_alg1_with(stream, g, cfg, x1, DecreaseCheck::Enforce)
}

pub fn run_alg1_with(
    stream: &dyn LossStream,
    g: &Regularizer,
    cfg: &StepConfig,
    x1: &DecisionVector,
    check: DecreaseCheck,
) -> Result<SolverTrace> {
    let mut runner = Alg1Runner::new(stream, g, cfg, x1, check)?;
    for t in 1..=cfg.horizon {
        runner.step(stream, t)?;
    }
    Ok(runner.into_trace())
}

/// Parameters accepted by [`validate_config_alg2`].
#[derive(Debug, Clone, PartialEq)]
pub struct Alg2Config {
    pub step: StepConfig,
    pub noise: NoiseModel,
    /// whether the bounded-noise iteration bound was requested and checked
    pub iteration_bound: bool,
}

/// Smallest `δ` with `δ² > 2σ² / (η(1 − ηL))` (exclusive).
pub fn min_delta_finite(eta: f64, smoothness: f64, sigma: f64) -> f64 {
    (2.0 * sigma * sigma / (eta * (1.0 - eta * smoothness))).sqrt()
}

/// Smallest `δ` with `δ² > σ² / (η(1 − η(L+1)))` (exclusive).
pub fn min_delta_bounded(eta: f64, smoothness: f64, sigma: f64) -> f64 {
    (sigma * sigma / (eta * (1.0 - eta * (smoothness + 1.0)))).sqrt()
}

/// Checks the stochastic method's preconditions.
///
/// Always: `η ∈ (0, 1/L)` and `δ² > 2σ²/(η(1−ηL))`, which makes every inner
/// loop finite almost surely. With `iteration_bound`: additionally bounded
/// noise, `η ∈ (0, 1/(L+1))` and `δ² > σ²/(η(1−η(L+1)))`.
pub fn validate_config_alg2(
    cfg: &StepConfig,
    noise: &NoiseModel,
    iteration_bound: bool,
) -> Result<Alg2Config> {
    cfg.validate()?;
    noise.validate()?;
    let sigma = noise.sigma();
    if (cfg.sigma - sigma).abs() > 1e-15 * sigma.max(1.0) {
        return Err(Error::config(format!(
            "configured sigma {} does not match the noise model's {sigma}",
            cfg.sigma
        )));
    }
    let (eta, l, delta) = (cfg.eta, cfg.smoothness, cfg.delta);
    let rhs = 2.0 * sigma * sigma / (eta * (1.0 - eta * l));
    if delta * delta <= rhs {
        return Err(Error::Config {
            message: format!(
                "delta^2 > 2 sigma^2 / (eta (1 - eta L)) fails: {} <= {rhs}; need delta > {}",
                delta * delta,
                rhs.sqrt()
            ),
            min_delta: Some(rhs.sqrt()),
        });
    }
    if iteration_bound {
        if !noise.is_bounded() {
            return Err(Error::config(
                "the iteration bound needs norm-bounded noise (ball or exact)",
            ));
        }
        if eta * (l + 1.0) >= 1.0 {
            return Err(Error::config(format!(
                "eta < 1/(L+1) = {} fails for eta = {eta}",
                1.0 / (l + 1.0)
            )));
        }
        let rhs = sigma * sigma / (eta * (1.0 - eta * (l + 1.0)));
        if delta * delta <= rhs {
            return Err(Error::Config {
                message: format!(
                    "delta^2 > sigma^2 / (eta (1 - eta (L+1))) fails: {} <= {rhs}; need delta > {}",
                    delta * delta,
                    rhs.sqrt()
                ),
                min_delta: Some(rhs.sqrt()),
            });
        }
    }
    Ok(Alg2Config {
        step: cfg.clone(),
        noise: *noise,
        iteration_bound,
    })
}

/// Round-by-round state of the stochastic method.
#[derive(Debug, Clone)]
pub struct Alg2Runner {
    g: Regularizer,
    cfg: StepConfig,
    oracle: StochasticOracle,
    window: WindowState,
    x: DecisionVector,
    last_round: usize,
    trace: SolverTrace,
}

impl Alg2Runner {
    pub fn new(
        stream: &dyn LossStream,
        g: &Regularizer,
        cfg: &Alg2Config,
        x1: &DecisionVector,
        seed: Seed,
    ) -> Result<Self> {
        check_start(stream, g, &cfg.step, x1)?;
        let w = cfg.step.window;
        let query_noise = cfg.noise.scaled(w as f64)?;
        Ok(Alg2Runner {
            g: g.clone(),
            cfg: cfg.step.clone(),
            oracle: StochasticOracle::new(query_noise, seed, w)?,
            window: WindowState::new(w, stream.dim()),
            x: x1.clone(),
            last_round: 0,
            trace: SolverTrace::new(SolverKind::Alg2, &cfg.step, x1),
        })
    }

    pub fn current(&self) -> &DecisionVector {
        &self.x
    }

    pub fn trace(&self) -> &SolverTrace {
        &self.trace
    }

    pub fn window_state(&self) -> &WindowState {
        &self.window
    }

    pub fn into_trace(self) -> SolverTrace {
        self.trace
    }

    pub fn step(&mut self, stream: &dyn LossStream, t: usize) -> Result<()> {
        if t != self.last_round + 1 {
            return Err(Error::Protocol(format!(
                "round {t} played after round {}",
                self.last_round
            )));
        }
        let w = self.cfg.window as i64;
        let ti = t as i64;
        let eta = self.cfg.eta;
        let tol = self.cfg.exit_tolerance();
        let calls_before = self.oracle.calls();
        self.oracle.announce(t)?;

        // sample the new loss at the current anchor and slide the window
        let fresh = self.oracle.sample(stream, ti, &self.x, 0)?.vector.into_inner();
        let old = self.window.get(ti - w).ok_or_else(|| {
            Error::Invariant(format!(
                "no estimate of f_{} at the current anchor in round {t}",
                ti - w
            ))
        })?;
        self.window.advance(ti, fresh, &old);

        let played = self.x.clone();
        let mut y = self.x.clone();
        let mut direction = self.window.aggregate().to_vec();
        let mut k = 1u64;
        let residual = loop {
            let r = residual_norm(&self.g, &y, &direction, eta);
            if r <= tol {
                break r;
            }
            if self.trace.tau >= self.cfg.max_inner {
                self.x = y;
                self.trace.sfo_calls = self.oracle.calls();
                return Err(Error::Capped {
                    round: t,
                    tau: self.trace.tau,
                    partial: Box::new(self.trace.clone()),
                });
            }
            y = DecisionVector::from(grad_step(&self.g, &y, &direction, eta));
            // resample every function of the window at the new point
            let mut estimates = Vec::with_capacity(w as usize);
            for i in (ti - w + 1)..=ti {
                let s = self.oracle.sample(stream, i, &y, k)?;
                estimates.push((i, s.vector.into_inner()));
            }
            self.window.reset(estimates);
            direction = self.window.aggregate().to_vec();
            k += 1;
            self.trace.tau += 1;
        };
        self.trace.rounds.push(RoundRecord {
            round: t,
            x: played,
            tau: k - 1,
            residual_at_exit: residual,
            exit_direction: DecisionVector::from(direction),
            oracle_calls: self.oracle.calls() - calls_before,
            decreases: Vec::new(),
        });
        self.x = y;
        self.trace.final_x = self.x.clone();
        self.trace.sfo_calls = self.oracle.calls();
        self.last_round = t;
        Ok(())
    }
}

/// Runs the stochastic method for `cfg.horizon` rounds after checking the
/// almost-sure finiteness condition.
pub fn run_alg2(
    stream: &dyn LossStream,
    g: &Regularizer,
    cfg: &StepConfig,
    noise: &NoiseModel,
    x1: &DecisionVector,
    seed: Seed,
) -> Result<SolverTrace> {
    let validated = validate_config_alg2(cfg, noise, false)?;
    run_alg2_validated(stream, g, &validated, x1, seed)
}

pub fn run_alg2_validated(
    stream: &dyn LossStream,
    g: &Regularizer,
    cfg: &Alg2Config,
    x1: &DecisionVector,
    seed: Seed,
) -> Result<SolverTrace> {
    let mut runner = Alg2Runner::new(stream, g, cfg, x1, seed)?;
    for t in 1..=cfg.step.horizon {
        runner.step(stream, t)?;
    }
    Ok(runner.into_trace())
}

/// Safety cap: ten times `T` times the applicable prox-grad count bound,
/// rounded up.
///
/// The count bounds hold per round (each inner step decreases the round's
/// objective by a fixed amount), not for the whole run, so the cap scales
/// with the horizon. Uses the bounded-noise bound when it applies, the
/// deterministic one for exact gradients, and otherwise the expected-descent
/// rate behind the almost-sure finiteness argument.
pub fn default_max_inner(
    kind: SolverKind,
    window: usize,
    horizon: usize,
    g_x1: f64,
    bound_m: f64,
    eta: f64,
    smoothness: f64,
    delta: f64,
    noise: &NoiseModel,
) -> u64 {
    let sigma = noise.sigma();
    let w = window as f64;
    let bound = match kind {
        SolverKind::Alg1 => metrics::bound_thm_queries_det(window, g_x1, bound_m, eta, smoothness, delta).ok(),
        SolverKind::Alg2 if sigma == 0.0 => {
            metrics::bound_thm_queries_det(window, g_x1, bound_m, eta, smoothness, delta).ok()
        }
        SolverKind::Alg2 => metrics::bound_thm_queries_stoch(window, g_x1, bound_m, eta, smoothness, delta, sigma)
            .ok()
            .filter(|_| noise.is_bounded())
            .or_else(|| {
                let rate = 2.0 * (eta * (1.0 - eta * smoothness) * delta * delta - 2.0 * sigma * sigma) / (w * w);
                (rate > 0.0).then(|| (g_x1 + 2.0 * bound_m) / rate)
            }),
    };
    match bound {
        Some(b) if b.is_finite() => {
            let cap = (10.0 * horizon as f64 * b).ceil();
            if cap >= u64::MAX as f64 {
                u64::MAX
            } else {
                (cap as u64).max(1)
            }
        }
        _ => u64::MAX,
    }
}
