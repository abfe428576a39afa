//! Stochastic first-order oracles.
//!
//! A sample is the exact stream gradient plus a noise draw. Draws are a pure
//! function of `(seed, round, inner iteration, function index)`, so replays
//! and parallel replications never depend on draw order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{self, LossStream};
use crate::vector::DecisionVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    /// Deterministic child seed for a labelled sub-stream.
    pub fn derive(self, label: u64) -> Seed {
        Seed(mix(self.0 ^ mix(label.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one keyed draw; a pure function of `(seed, key)`.
pub(crate) fn keyed_rng(seed: Seed, key: DrawKey) -> ChaCha8Rng {
    key.rng(seed)
}

/// Coordinates of one oracle draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DrawKey {
    pub round: u64,
    pub inner: u64,
    pub slot: u64,
}

impl DrawKey {
    fn rng(&self, seed: Seed) -> ChaCha8Rng {
        let s = mix(mix(mix(seed.0 ^ mix(self.round)) ^ mix(self.inner.wrapping_add(1)))
            ^ mix(self.slot.wrapping_add(2)));
        ChaCha8Rng::seed_from_u64(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Exact,
    /// `N(0, σ²/n · I)`, so `E‖ξ‖² = σ²`.
    Gaussian { sigma: f64 },
    /// Uniform on the closed ball of radius σ: unbiased and `‖ξ‖ ≤ σ`.
    Ball { sigma: f64 },
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseModel::Exact => 0.0,
            NoiseModel::Gaussian { sigma } | NoiseModel::Ball { sigma } => sigma,
        }
    }

    /// Whether every draw obeys `‖ξ‖ ≤ σ`.
    pub fn is_bounded(&self) -> bool {
        !matches!(self, NoiseModel::Gaussian { sigma } if *sigma > 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.sigma();
        if s.is_finite() && s >= 0.0 {
            Ok(())
        } else {
            Err(Error::param(format!("noise level must be finite and >= 0, got {s}")))
        }
    }

    /// The same law with `σ ← σ / factor`.
    pub fn scaled(&self, factor: f64) -> Result<NoiseModel> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::param(format!("scale factor must be positive, got {factor}")));
        }
        Ok(match *self {
            NoiseModel::Exact => NoiseModel::Exact,
            NoiseModel::Gaussian { sigma } => NoiseModel::Gaussian { sigma: sigma / factor },
            NoiseModel::Ball { sigma } => NoiseModel::Ball { sigma: sigma / factor },
        })
    }

    /// One noise vector of dimension `n` for the given key.
    pub fn draw(&self, seed: Seed, key: DrawKey, n: usize) -> Vec<f64> {
        match *self {
            NoiseModel::Exact => vec![0.0; n],
            NoiseModel::Gaussian { sigma } | NoiseModel::Ball { sigma } if sigma == 0.0 => {
                vec![0.0; n]
            }
            NoiseModel::Gaussian { sigma } => {
                let mut rng = key.rng(seed);
                let sd = sigma / (n as f64).sqrt();
                (0..n)
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            NoiseModel::Ball { sigma } => {
                let mut rng = key.rng(seed);
                let mut dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let len = crate::vector::norm(&dir);
                if len == 0.0 {
                    return vec![0.0; n];
                }
                let u: f64 = rng.random();
                let radius = (sigma * u.powf(1.0 / n as f64)).min(sigma);
                for v in dir.iter_mut() {
                    *v *= radius / len;
                }
                // guard against a final rounding step past the radius
                let l = crate::vector::norm(&dir);
                if l > sigma {
                    for v in dir.iter_mut() {
                        *v *= sigma / l;
                    }
                }
                dir
            }
        }
    }
}

/// One oracle answer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub vector: DecisionVector,
    pub oracle_calls_consumed: u64,
}

/// `S_σ(x; ω, f_i)` bound to one solver run.
///
/// The oracle enforces the online protocol: after round `t` is announced it
/// answers only for functions `i` with `t − w + 1 ≤ i ≤ t`.
#[derive(Debug, Clone)]
pub struct StochasticOracle {
    noise: NoiseModel,
    seed: Seed,
    window: usize,
    announced: usize,
    calls: u64,
}

impl StochasticOracle {
    pub fn new(noise: NoiseModel, seed: Seed, window: usize) -> Result<Self> {
        noise.validate()?;
        if window == 0 {
            return Err(Error::param("window must be >= 1"));
        }
        Ok(StochasticOracle {
            noise,
            seed,
            window,
            announced: 0,
            calls: 0,
        })
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn announced(&self) -> usize {
        self.announced
    }

    /// Opens round `t`; rounds must be announced in increasing order.
    pub fn announce(&mut self, t: usize) -> Result<()> {
        if t <= self.announced {
            return Err(Error::Protocol(format!(
                "round {t} announced after round {}",
                self.announced
            )));
        }
        self.announced = t;
        Ok(())
    }

    /// Samples `∇f_i(x) + ξ`. Functions with `i ≤ 0` are identically zero and
    /// are answered exactly; the call is still counted.
    pub fn sample(
        &mut self,
        stream: &dyn LossStream,
        i: i64,
        x: &[f64],
        inner: u64,
    ) -> Result<GradientSample> {
        let t = self.announced as i64;
        if t == 0 || i > t || i <= t - self.window as i64 {
            return Err(Error::Protocol(format!(
                "oracle query for f_{i} outside the active window of round {t} (w = {})",
                self.window
            )));
        }
        if x.len() != stream.dim() {
            return Err(Error::shape(stream.dim(), x.len()));
        }
        self.calls += 1;
        if i <= 0 {
            return Ok(GradientSample {
                vector: DecisionVector::zeros(x.len()),
                oracle_calls_consumed: 1,
            });
        }
        let mut g = stream::grad(stream, i, x)?;
        let key = DrawKey {
            round: t as u64,
            inner,
            slot: i as u64,
        };
        let xi = self.noise.draw(self.seed, key, x.len());
        for (a, b) in g.iter_mut().zip(&xi) {
            *a += b;
        }
        Ok(GradientSample {
            vector: g,
            oracle_calls_consumed: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::QuadraticDriftStream;

    #[test]
    fn scaling() {
        let b = NoiseModel::Ball { sigma: 0.5 }.scaled(5.0).unwrap();
        assert!(matches!(b, NoiseModel::Ball { sigma } if (sigma - 0.1).abs() < 1e-15));
        assert_eq!(NoiseModel::Exact.scaled(3.0).unwrap(), NoiseModel::Exact);
        assert_eq!(
            NoiseModel::Gaussian { sigma: 1.0 }.scaled(4.0).unwrap(),
            NoiseModel::Gaussian { sigma: 0.25 }
        );
        assert!(NoiseModel::Exact.scaled(0.0).is_err());
        assert!(NoiseModel::Exact.scaled(-1.0).is_err());
    }

    #[test]
    fn exact_and_zero_radius_are_noise_free() {
        let key = DrawKey { round: 3, inner: 1, slot: 2 };
        assert_eq!(NoiseModel::Exact.draw(Seed(1), key, 4), vec![0.0; 4]);
        assert_eq!(NoiseModel::Ball { sigma: 0.0 }.draw(Seed(1), key, 4), vec![0.0; 4]);
    }

    #[test]
    fn draws_are_pure_functions_of_the_key() {
        let m = NoiseModel::Ball { sigma: 1.0 };
        let k = DrawKey { round: 7, inner: 2, slot: 5 };
        assert_eq!(m.draw(Seed(9), k, 6), m.draw(Seed(9), k, 6));
        assert_ne!(m.draw(Seed(9), k, 6), m.draw(Seed(10), k, 6));
        assert_ne!(
            m.draw(Seed(9), k, 6),
            m.draw(Seed(9), DrawKey { inner: 3, ..k }, 6)
        );
    }

    #[test]
    fn window_reach_is_enforced() {
        let s = QuadraticDriftStream::isotropic(2, 10);
        let mut o = StochasticOracle::new(NoiseModel::Exact, Seed(0), 3).unwrap();
        assert!(matches!(o.sample(&s, 1, &[0.0, 0.0], 0), Err(Error::Protocol(_))));
        o.announce(5).unwrap();
        assert!(o.sample(&s, 5, &[0.0, 0.0], 0).is_ok());
        assert!(o.sample(&s, 3, &[0.0, 0.0], 0).is_ok());
        assert!(matches!(o.sample(&s, 2, &[0.0, 0.0], 0), Err(Error::Protocol(_))));
        assert!(matches!(o.sample(&s, 6, &[0.0, 0.0], 0), Err(Error::Protocol(_))));
        assert!(matches!(o.announce(5), Err(Error::Protocol(_))));
        assert_eq!(o.calls(), 2);
    }

    #[test]
    fn exact_oracle_returns_gradient() {
        // f(x) = ½‖x‖²
        let s = QuadraticDriftStream::isotropic(2, 4);
        let mut o = StochasticOracle::new(NoiseModel::Exact, Seed(0), 1).unwrap();
        o.announce(1).unwrap();
        let g = o.sample(&s, 1, &[1.0, -2.0], 0).unwrap();
        assert_eq!(g.vector.as_slice(), &[1.0, -2.0]);
        assert_eq!(g.oracle_calls_consumed, 1);
    }
}
