use crate::error::{Error, Result};
use crate::oracle::NoiseModel;
use crate::solver::SolverKind;

use super::{
    Comparison, DeltaSpec, EtaSpec, ExperimentConfig, Mode, ProblemSpec, Target, TargetMetric,
};

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 7] = [
    "det-regret",
    "stoch-regret",
    "stoch-iteration",
    "offline-reduction",
    "appendix-b",
    "ontap",
    "game-equilibrium",
];

fn drift(period: Option<f64>) -> ProblemSpec {
    ProblemSpec::QuadraticDrift { n: 10, period, radius: 1.0 }
}

fn base(name: &str, problem: ProblemSpec, solver: SolverKind) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        problem,
        solver,
        horizon: None,
        windows: Vec::new(),
        eta: EtaSpec::OverL(0.5),
        delta: DeltaSpec::Value(0.1),
        noise: NoiseModel::Exact,
        iteration_bound: false,
        max_inner: None,
        replications: 1,
        seed: 7,
        mode: Mode::Online,
        regularizer: None,
        targets: Vec::new(),
        write_traces: true,
        out: None,
    }
}

/// Built-in experiment configurations.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "det-regret" => ExperimentConfig {
            horizon: Some(200),
            windows: vec![5, 10, 20],
            replications: 10,
            ..base(name, drift(Some(50.0)), SolverKind::Alg1)
        },
        "stoch-regret" => ExperimentConfig {
            horizon: Some(100),
            windows: vec![10],
            delta: DeltaSpec::FiniteMargin(1.1),
            noise: NoiseModel::Ball { sigma: 0.3 },
            replications: 50,
            ..base(name, drift(Some(50.0)), SolverKind::Alg2)
        },
        "stoch-iteration" => ExperimentConfig {
            horizon: Some(100),
            windows: vec![10],
            eta: EtaSpec::OverLPlusOne(0.5),
            delta: DeltaSpec::BoundedMargin(1.1),
            noise: NoiseModel::Ball { sigma: 0.3 },
            iteration_bound: true,
            replications: 20,
            ..base(name, drift(Some(50.0)), SolverKind::Alg2)
        },
        "offline-reduction" => ExperimentConfig {
            delta: DeltaSpec::FiniteMargin(1.1),
            noise: NoiseModel::Ball { sigma: 0.3 },
            replications: 30,
            mode: Mode::OfflineReduction { epsilon: 0.05, pilot_runs: 5 },
            ..base(name, drift(None), SolverKind::Alg2)
        },
        "appendix-b" => ExperimentConfig {
            horizon: Some(10_000),
            windows: vec![1, 100],
            eta: EtaSpec::Value(0.5),
            replications: 20,
            targets: vec![
                Target {
                    metric: TargetMetric::MeanRegretPerRound,
                    window: 1,
                    comparison: Comparison::AtLeast,
                    value: 0.4,
                },
                Target {
                    metric: TargetMetric::MeanRegretPerRound,
                    window: 100,
                    comparison: Comparison::AtMost,
                    value: 0.05,
                },
            ],
            write_traces: false,
            ..base(name, ProblemSpec::SignFlip, SolverKind::Alg1)
        },
        "ontap" => ExperimentConfig {
            horizon: Some(200),
            windows: vec![10],
            replications: 5,
            ..base(
                name,
                ProblemSpec::Ontap {
                    period: Some(10.0),
                    demand_noise: 0.02,
                    mu: 0.1,
                    instance: None,
                    demand_base: None,
                    demand_amplitude: None,
                },
                SolverKind::Alg1,
            )
        },
        "game-equilibrium" => ExperimentConfig {
            replications: 5,
            mode: Mode::Equilibrium { epsilon: 0.01 },
            ..base(
                name,
                ProblemSpec::QuadraticGame { dims: vec![2, 2], signs: vec![1.0, 1.0], radius: 1.0 },
                SolverKind::Alg1,
            )
        },
        other => {
            return Err(Error::config(format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg, "{name}");
        }
        assert!(preset("nope").is_err());
    }
}
