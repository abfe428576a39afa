//! Iterative m-player games with a joint smooth cost.
//!
//! Player `i` controls block `xⁱ` and at round `t` observes
//! `f_tⁱ(z) = sᵢ · f(x_t¹, …, z, …, x_tᵐ)`, the joint cost with every other
//! block frozen at its round-`t` value. `sᵢ = −1` turns player `i` into a
//! maximizer, which models two-player minimax games.

use std::borrow::Cow;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{NoiseModel, Seed};
use crate::prox::{residual_norm, Regularizer, StepConfig};
use crate::solver::{
    validate_config_alg2, Alg1Runner, Alg2Runner, DecreaseCheck, SolverKind, SolverTrace,
};
use crate::stream::{self, LossStream};
use crate::vector::{dot, DecisionVector};

/// `f(x) = ½ xᵀQx + cᵀx` over the joint vector, each player restricted to
/// the box `[-radius, radius]^{nᵢ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticGame {
    q: Vec<f64>,
    c: Vec<f64>,
    dims: Vec<usize>,
    signs: Vec<f64>,
    radius: f64,
}

impl QuadraticGame {
    pub fn new(q: Vec<f64>, c: Vec<f64>, dims: Vec<usize>, signs: Vec<f64>, radius: f64) -> Result<Self> {
        let n: usize = dims.iter().sum();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::param("need at least one player, each with dimension >= 1"));
        }
        if c.len() != n {
            return Err(Error::shape(n, c.len()));
        }
        if q.len() != n * n {
            return Err(Error::shape(n * n, q.len()));
        }
        if signs.len() != dims.len() {
            return Err(Error::shape(dims.len(), signs.len()));
        }
        if signs.iter().any(|s| *s != 1.0 && *s != -1.0) {
            return Err(Error::param("player signs must be +1 or -1"));
        }
        for i in 0..n {
            for j in 0..n {
                if q[i * n + j] != q[j * n + i] {
                    return Err(Error::param("joint quadratic must be symmetric"));
                }
            }
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::param(format!("radius must be positive, got {radius}")));
        }
        Ok(QuadraticGame { q, c, dims, signs, radius })
    }

    /// Seeded instance with an indefinite joint quadratic.
    pub fn random(dims: Vec<usize>, signs: Vec<f64>, radius: f64, seed: Seed) -> Result<Self> {
        let n: usize = dims.iter().sum();
        let mut rng = seed.derive(0x6a).rng();
        let scale = 1.0 / (n.max(1) as f64).sqrt();
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = scale * rng.sample::<f64, _>(StandardNormal);
                q[i * n + j] = v;
                q[j * n + i] = v;
            }
        }
        let c = (0..n).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        Self::new(q, c, dims, signs, radius)
    }

    /// `f(x¹, x²) = ⟨x¹, x²⟩` with both players of dimension `n`.
    pub fn bilinear(n: usize, signs: [f64; 2], radius: f64) -> Result<Self> {
        let m = 2 * n;
        let mut q = vec![0.0; m * m];
        for i in 0..n {
            q[i * m + n + i] = 1.0;
            q[(n + i) * m + i] = 1.0;
        }
        Self::new(q, vec![0.0; m], vec![n, n], signs.to_vec(), radius)
    }

    pub fn players(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Index range of player `i` in the joint vector.
    pub fn block(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.dims[..i].iter().sum();
        start..start + self.dims[i]
    }

    pub fn regularizer(&self, i: usize) -> Regularizer {
        Regularizer::uniform_box(self.dims[i], -self.radius, self.radius)
    }

    /// Joint cost `f(x)` (without player signs).
    pub fn cost(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut quad = 0.0;
        for i in 0..n {
            quad += x[i] * dot(&self.q[i * n..(i + 1) * n], x);
        }
        0.5 * quad + dot(&self.c, x)
    }

    /// `sᵢ ∇_{xⁱ} f(x)`.
    pub fn block_grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let s = self.signs[i];
        self.block(i)
            .map(|k| s * (dot(&self.q[k * n..(k + 1) * n], x) + self.c[k]))
            .collect()
    }

    /// `max_i ‖Qᵢᵢ‖₂`, the smoothness of every player loss in its own block.
    pub fn smoothness(&self) -> f64 {
        let n = self.dim();
        let mut l = 0.0f64;
        for i in 0..self.players() {
            let r = self.block(i);
            let m = r.len();
            let mut sub = Vec::with_capacity(m * m);
            for a in r.clone() {
                for b in r.clone() {
                    sub.push(self.q[a * n + b]);
                }
            }
            let eig = DMatrix::from_row_slice(m, m, &sub).symmetric_eigenvalues();
            l = l.max(eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
        }
        if l > 0.0 {
            l
        } else {
            1.0
        }
    }

    /// `½ Σ|Q_ij| r² + Σ|c_i| r ≥ |f|` on the joint box.
    pub fn bound(&self) -> f64 {
        let r = self.radius;
        self.q.iter().map(|v| v.abs()).sum::<f64>() * r * r / 2.0
            + self.c.iter().map(|v| v.abs()).sum::<f64>() * r
    }

    fn check_profile(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::shape(self.dim(), x.len()));
        }
        Ok(())
    }

    fn splice(&self, i: usize, profile: &[f64], z: &[f64]) -> Vec<f64> {
        let mut joint = profile.to_vec();
        joint[self.block(i)].copy_from_slice(z);
        joint
    }
}

/// Player `i`'s view of the game: `f_tⁱ` for each revealed round.
///
/// `history[t − 1]` is the joint profile `x_t`; round `t` is revealed once
/// every player has committed to it.
#[derive(Debug, Clone)]
pub struct PlayerStream<'a> {
    game: &'a QuadraticGame,
    player: usize,
    horizon: usize,
    history: Cow<'a, [Vec<f64>]>,
}

impl<'a> PlayerStream<'a> {
    pub fn new(game: &'a QuadraticGame, player: usize, horizon: usize) -> Result<Self> {
        Self::with_history(game, player, horizon, Cow::Owned(Vec::new()))
    }

    /// A stream over an existing profile history (for evaluation).
    pub fn with_history(
        game: &'a QuadraticGame,
        player: usize,
        horizon: usize,
        history: Cow<'a, [Vec<f64>]>,
    ) -> Result<Self> {
        if player >= game.players() {
            return Err(Error::Range(format!(
                "player {player} of a {}-player game",
                game.players()
            )));
        }
        if history.len() > horizon {
            return Err(Error::Range("history longer than the horizon".into()));
        }
        for p in history.iter() {
            game.check_profile(p)?;
        }
        Ok(PlayerStream { game, player, horizon, history })
    }

    /// Reveals `f_tⁱ` for the next round from the committed joint profile.
    pub fn commit(&mut self, profile: Vec<f64>) -> Result<()> {
        self.game.check_profile(&profile)?;
        if self.history.len() >= self.horizon {
            return Err(Error::Range("all rounds already revealed".into()));
        }
        self.history.to_mut().push(profile);
        Ok(())
    }
}

impl LossStream for PlayerStream<'_> {
    fn dim(&self) -> usize {
        self.game.dims[self.player]
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn smoothness(&self) -> f64 {
        self.game.smoothness()
    }
    fn bound(&self) -> f64 {
        self.game.bound()
    }
    fn descriptor(&self) -> String {
        format!("player {} of a {}-player quadratic game", self.player, self.game.players())
    }
    fn value_at(&self, t: usize, z: &[f64]) -> f64 {
        let joint = self.game.splice(self.player, &self.history[t - 1], z);
        self.game.signs[self.player] * self.game.cost(&joint)
    }
    fn grad_at(&self, t: usize, z: &[f64]) -> Vec<f64> {
        let joint = self.game.splice(self.player, &self.history[t - 1], z);
        self.game.block_grad(self.player, &joint)
    }
    fn revealed(&self) -> usize {
        self.history.len()
    }
}

/// Aligned record of a simultaneous run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTrace {
    pub players: Vec<SolverTrace>,
    /// joint profiles `x_1, …, x_T`
    pub profiles: Vec<Vec<f64>>,
    pub final_profile: Vec<f64>,
}

enum Runner {
    Alg1(Alg1Runner),
    Alg2(Alg2Runner),
}

impl Runner {
    fn current(&self) -> &DecisionVector {
        match self {
            Runner::Alg1(r) => r.current(),
            Runner::Alg2(r) => r.current(),
        }
    }
    fn step(&mut self, stream: &dyn LossStream, t: usize) -> Result<()> {
        match self {
            Runner::Alg1(r) => r.step(stream, t),
            Runner::Alg2(r) => r.step(stream, t),
        }
    }
    fn into_trace(self) -> SolverTrace {
        match self {
            Runner::Alg1(r) => r.into_trace(),
            Runner::Alg2(r) => r.into_trace(),
        }
    }
}

/// Seed of player `i`; player 0 uses the run seed itself.
pub fn player_seed(seed: Seed, i: usize) -> Seed {
    if i == 0 {
        seed
    } else {
        seed.derive(0x9a00 + i as u64)
    }
}

fn tag(player: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Player {
        player,
        source: Box::new(e),
    }
}

/// Runs one solver per player in lock step. Every round, all players commit
/// `x_t`, each `f_tⁱ` is revealed from that joint profile, and then each
/// player runs its own inner loop.
///
/// `x1` defaults to the origin (the box centre). Alg2 runs check the
/// almost-sure finiteness condition; `noise` is ignored for Alg1.
pub fn run_simultaneous(
    game: &QuadraticGame,
    kind: SolverKind,
    cfg: &StepConfig,
    noise: &NoiseModel,
    seed: Seed,
    x1: Option<&[f64]>,
) -> Result<GameTrace> {
    let m = game.players();
    let start = match x1 {
        Some(x) => {
            game.check_profile(x)?;
            x.to_vec()
        }
        None => vec![0.0; game.dim()],
    };
    let mut streams = (0..m)
        .map(|i| PlayerStream::new(game, i, cfg.horizon))
        .collect::<Result<Vec<_>>>()?;
    let validated = match kind {
        SolverKind::Alg2 => Some(validate_config_alg2(cfg, noise, false)?),
        SolverKind::Alg1 => None,
    };
    let mut runners = Vec::with_capacity(m);
    for i in 0..m {
        let xi = DecisionVector::from(start[game.block(i)].to_vec());
        let g = game.regularizer(i);
        let r = match &validated {
            None => Runner::Alg1(
                Alg1Runner::new(&streams[i], &g, cfg, &xi, DecreaseCheck::Enforce).map_err(tag(i))?,
            ),
            Some(v) => Runner::Alg2(
                Alg2Runner::new(&streams[i], &g, v, &xi, player_seed(seed, i)).map_err(tag(i))?,
            ),
        };
        runners.push(r);
    }
    let mut profiles = Vec::with_capacity(cfg.horizon);
    for t in 1..=cfg.horizon {
        let profile: Vec<f64> = runners.iter().flat_map(|r| r.current().iter().copied()).collect();
        for s in streams.iter_mut() {
            s.commit(profile.clone())?;
        }
        profiles.push(profile);
        for (i, (r, s)) in runners.iter_mut().zip(&streams).enumerate() {
            r.step(s, t).map_err(tag(i))?;
        }
    }
    let final_profile = runners.iter().flat_map(|r| r.current().iter().copied()).collect();
    Ok(GameTrace {
        players: runners.into_iter().map(Runner::into_trace).collect(),
        profiles,
        final_profile,
    })
}

/// `‖P_η^{gⁱ}(x_tⁱ; ∇S^i_{t,w}(x_tⁱ))‖²` for every player.
pub fn equilibrium_residuals(
    game: &QuadraticGame,
    profiles: &[Vec<f64>],
    t: usize,
    eta: f64,
    w: usize,
) -> Result<Vec<f64>> {
    if t == 0 || t > profiles.len() {
        return Err(Error::Range(format!(
            "round {t} outside 1..={}",
            profiles.len()
        )));
    }
    (0..game.players())
        .map(|i| {
            let s = PlayerStream::with_history(game, i, t, Cow::Borrowed(&profiles[..t]))?;
            let x = &profiles[t - 1][game.block(i)];
            let d = stream::sliding_average_grad(&s, t, w, x)?;
            Ok(residual_norm(&game.regularizer(i), x, &d, eta).powi(2))
        })
        .collect()
}

/// Whether `x_t` is an ε-(η, w) smoothed local equilibrium.
pub fn equilibrium_check(
    game: &QuadraticGame,
    profiles: &[Vec<f64>],
    t: usize,
    eta: f64,
    w: usize,
    epsilon: f64,
) -> Result<bool> {
    Ok(equilibrium_residuals(game, profiles, t, eta, w)?
        .iter()
        .all(|r| *r <= epsilon))
}

/// First round `t ≥ from` at which the equilibrium test passes.
pub fn first_equilibrium(
    game: &QuadraticGame,
    profiles: &[Vec<f64>],
    from: usize,
    eta: f64,
    w: usize,
    epsilon: f64,
) -> Result<Option<usize>> {
    for t in from.max(1)..=profiles.len() {
        if equilibrium_check(game, profiles, t, eta, w, epsilon)? {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Per-player trajectory variation along a simultaneous run.
pub fn player_variations(game: &QuadraticGame, trace: &GameTrace, w: usize) -> Result<Vec<f64>> {
    let t = trace.profiles.len();
    (0..game.players())
        .map(|i| {
            let s = PlayerStream::with_history(game, i, t, Cow::Borrowed(&trace.profiles))?;
            stream::trajectory_variation(&trace.players[i].iterates(), &s, w)
        })
        .collect()
}

/// Per-player local regret along a simultaneous run.
pub fn player_regrets(game: &QuadraticGame, trace: &GameTrace, eta: f64, w: usize) -> Result<Vec<f64>> {
    let t = trace.profiles.len();
    (0..game.players())
        .map(|i| {
            let s = PlayerStream::with_history(game, i, t, Cow::Borrowed(&trace.profiles))?;
            crate::metrics::local_regret(&trace.players[i].iterates(), &s, &game.regularizer(i), w, eta)
        })
        .collect()
}

/// Candidate windows for an equilibrium run with `T = w²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquilibriumWindow {
    /// `⌈2k·C/√ε⌉` in closed form
    pub statement: usize,
    /// smallest `w` with `w(w − 1) ≥ 2k·C/ε`, which the averaging argument needs
    pub proof_side: usize,
    /// the larger of the two, and at least 2
    pub chosen: usize,
}

impl EquilibriumWindow {
    pub fn horizon(&self) -> usize {
        self.chosen * self.chosen
    }
}

/// Windows for `k` players with `C = δ² + c` (exact gradients) or
/// `C = δ² + 7σ² + 6c` (stochastic oracle), where `V_w[T] ≤ cT`.
pub fn equilibrium_window(
    players: usize,
    delta: f64,
    sigma: f64,
    c: f64,
    epsilon: f64,
    kind: SolverKind,
) -> Result<EquilibriumWindow> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
    }
    if players == 0 || !(c >= 0.0) {
        return Err(Error::param("need players >= 1 and c >= 0"));
    }
    let constant = match kind {
        SolverKind::Alg1 => delta * delta + c,
        SolverKind::Alg2 => delta * delta + 7.0 * sigma * sigma + 6.0 * c,
    };
    let target = 2.0 * players as f64 * constant;
    let statement = ((target / epsilon.sqrt()).ceil() as usize).max(1);
    let need = target / epsilon;
    let mut proof_side = 2usize;
    while ((proof_side * (proof_side - 1)) as f64) < need {
        proof_side += 1;
    }
    Ok(EquilibriumWindow {
        statement,
        proof_side,
        chosen: statement.max(proof_side).max(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::run_alg1;
    use crate::stream::QuadraticDriftStream;

    fn cfg(l: f64, w: usize, delta: f64, t: usize) -> StepConfig {
        StepConfig {
            eta: 0.5 / l,
            smoothness: l,
            window: w,
            delta,
            sigma: 0.0,
            horizon: t,
            max_inner: 1_000_000,
        }
    }

    #[test]
    fn bilinear_gradient_is_the_other_block() {
        let g = QuadraticGame::bilinear(2, [1.0, 1.0], 1.0).unwrap();
        let mut s = PlayerStream::new(&g, 0, 3).unwrap();
        s.commit(vec![0.1, 0.2, -0.3, 0.7]).unwrap();
        let d = stream::grad(&s, 1, &[0.9, -0.9]).unwrap();
        assert_eq!(d.as_slice(), &[-0.3, 0.7]);
    }

    #[test]
    fn future_rounds_are_protocol_errors() {
        let g = QuadraticGame::bilinear(1, [1.0, -1.0], 1.0).unwrap();
        let mut s = PlayerStream::new(&g, 1, 3).unwrap();
        assert!(matches!(stream::grad(&s, 1, &[0.0]), Err(Error::Protocol(_))));
        s.commit(vec![0.0, 0.0]).unwrap();
        assert!(stream::grad(&s, 1, &[0.0]).is_ok());
        assert!(matches!(stream::grad(&s, 2, &[0.0]), Err(Error::Protocol(_))));
    }

    #[test]
    fn single_player_matches_single_agent() {
        let game = QuadraticGame::random(vec![3], vec![1.0], 1.0, Seed(4)).unwrap();
        let single = QuadraticDriftStream::from_parts(
            game.q.clone(),
            vec![0.0; 9],
            game.c.clone(),
            vec![0.0; 3],
            None,
            40,
            1.0,
        )
        .unwrap();
        let l = game.smoothness();
        let c = cfg(l, 4, 0.05, 40);
        let gt = run_simultaneous(&game, SolverKind::Alg1, &c, &NoiseModel::Exact, Seed(1), None).unwrap();
        let st = run_alg1(&single, &single.domain(), &c, &DecisionVector::zeros(3)).unwrap();
        assert_eq!(gt.players[0].iterates(), st.iterates());
        assert_eq!(gt.players[0].final_x, st.final_x);
        assert_eq!(gt.players[0].tau, st.tau);
    }

    #[test]
    fn infinite_epsilon_always_fires() {
        let game = QuadraticGame::random(vec![2, 2], vec![1.0, -1.0], 1.0, Seed(2)).unwrap();
        let l = game.smoothness();
        let tr = run_simultaneous(&game, SolverKind::Alg1, &cfg(l, 3, 0.1, 9), &NoiseModel::Exact, Seed(0), None)
            .unwrap();
        for t in 1..=9 {
            assert!(equilibrium_check(&game, &tr.profiles, t, 0.5 / l, 3, f64::INFINITY).unwrap());
        }
        assert!(equilibrium_check(&game, &tr.profiles, 10, 0.5 / l, 3, 1.0).is_err());
    }

    #[test]
    fn window_formulas() {
        let w = equilibrium_window(2, 0.1, 0.0, 0.0, 0.04, SolverKind::Alg1).unwrap();
        // statement: ⌈4·0.01/0.2⌉ = 1; proof side: w(w−1) ≥ 1
        assert_eq!(w.statement, 1);
        assert_eq!(w.proof_side, 2);
        assert_eq!(w.chosen, 2);
        let w = equilibrium_window(2, 1.0, 0.0, 1.0, 0.01, SolverKind::Alg1).unwrap();
        assert_eq!(w.statement, 80);
        assert!(w.proof_side * (w.proof_side - 1) >= 800);
        assert!((w.proof_side - 1) * (w.proof_side - 2) < 800);
    }
}
