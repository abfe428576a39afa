//! Time-smoothed online proximal-gradient methods.
//!
//! The crate covers composite online problems `f_t + g` where each `f_t` is
//! smooth (possibly non-convex) and `g` is a closed convex regularizer. It
//! provides:
//!
//! * proximal operators and the prox residual ([`prox`]),
//! * deterministic and stochastic first-order oracles ([`oracle`]),
//! * online loss streams with sliding-window averaging ([`stream`]),
//! * the deterministic and stochastic time-smoothed solvers ([`solver`]),
//! * regret measures and guarantee evaluators ([`metrics`]),
//! * an online traffic-assignment benchmark ([`ontap`]) and
//!   multi-player games ([`games`]),
//! * an experiment runner used by the `tsprox` binary ([`experiment`]).

pub mod error;
pub mod experiment;
pub mod games;
pub mod metrics;
pub mod ontap;
pub mod oracle;
pub mod prox;
pub mod solver;
pub mod stream;
mod vector;

pub use error::{Error, Result};
pub use oracle::{DrawKey, GradientSample, NoiseModel, Seed, StochasticOracle};
pub use prox::{
    project_simplex, prox_grad_map, prox_residual, residual_norm_sq, Block, Regularizer,
    StepConfig,
};
pub use solver::{run_alg1, run_alg2, validate_config_alg2, RoundRecord, SolverKind, SolverTrace};
pub use stream::LossStream;
pub use vector::DecisionVector;
