//! Acceptance gate: one PASS/FAIL line per criterion, at the stated
//! tolerances.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use tsprox::experiment::{self, preset, ExperimentConfig, ProblemSpec, RunOptions, RunReport};
use tsprox::games::{self, QuadraticGame};
use tsprox::ontap::default_instance;
use tsprox::stream::QuadraticDriftStream;
use tsprox::{
    prox_residual, run_alg1, run_alg2, DrawKey, NoiseModel, Regularizer, Seed, SolverKind, StepConfig,
};

struct Outcome {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn run(cfg: &ExperimentConfig) -> (RunReport, Duration) {
    let start = Instant::now();
    let r = experiment::run_experiment(cfg, &RunOptions::default()).expect("experiment runs");
    (r, start.elapsed())
}

fn violations(r: &RunReport, check: &str) -> f64 {
    r.check(&format!("{check}:violations")).map_or(f64::NAN, |c| c.measured)
}

fn criteria_1_to_3() -> Vec<Outcome> {
    let (r, took) = run(&preset("det-regret").unwrap());
    let runs = r.rows.len();
    let reg = violations(&r, "regret_det");
    let q = violations(&r, "queries_det");
    let dec = violations(&r, "sufficient_decrease");
    let worst_ratio = r.rows.iter().map(|x| x.local_regret / x.regret_bound).fold(0.0, f64::max);
    vec![
        Outcome {
            id: 1,
            title: "deterministic regret bound",
            passed: runs == 30 && reg == 0.0 && took < Duration::from_secs(10),
            detail: format!("{runs} runs, {reg} violations, max Reg/bound {worst_ratio:.3e}, {took:.2?}"),
        },
        Outcome {
            id: 2,
            title: "deterministic query bound",
            passed: runs == 30 && q == 0.0,
            detail: format!(
                "{q} violations, max tau/bound {:.3e}",
                r.rows.iter().map(|x| x.tau as f64 / x.query_bound.unwrap()).fold(0.0, f64::max)
            ),
        },
        Outcome {
            id: 3,
            title: "sufficient decrease per inner step",
            passed: dec == 0.0 && r.rows.iter().all(|x| x.decrease_violations == 0),
            detail: format!("{dec} runs with violations (slack 1e-9)"),
        },
    ]
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4);
    let mut bad = [0usize; 3];
    let trials = 1000;
    for kind in KINDS {
        for _ in 0..trials {
            let n = r.random_range(1..8);
            let g = regularizer(kind, n, &mut r);
            let eta = r.random_range(0.01..3.0);
            let u = vector(n, 3.0, &mut r);
            let v = vector(n, 3.0, &mut r);
            if dist(&g.prox(&u, eta), &g.prox(&v, eta)) > dist(&u, &v) + 1e-9 {
                bad[0] += 1;
            }
            let x = g.sample_point(n, 2.0, &mut r);
            let (d1, d2) = (vector(n, 3.0, &mut r), vector(n, 3.0, &mut r));
            let sum: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
            let lhs = norm(&prox_residual(&g, &x, &sum, eta).unwrap());
            if lhs > norm(&prox_residual(&g, &x, &d1, eta).unwrap()) + norm(&d2) + 1e-9 {
                bad[1] += 1;
            }
            let p = g.prox(&u, eta);
            let obj = |z: &[f64]| eta * g.value(z) + 0.5 * dist(z, &u).powi(2);
            let y = g.sample_point(n, 2.0, &mut r);
            let s: f64 = r.random_range(0.0..1.0f64).powi(3);
            let z: Vec<f64> = p.iter().zip(&y).map(|(a, b)| a + s * (b - a)).collect();
            if obj(&p) > obj(&z) + 1e-9 {
                bad[2] += 1;
            }
        }
    }
    let took = start.elapsed();
    Outcome {
        id: 4,
        title: "prox property suite",
        passed: bad == [0, 0, 0] && took < Duration::from_secs(5),
        detail: format!(
            "{} trials per property over {} kinds; violations nonexpansive {}, triangle {}, optimality {}; {took:.2?}",
            trials * KINDS.len(),
            KINDS.len(),
            bad[0],
            bad[1],
            bad[2]
        ),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let n_draws = 100_000u64;
    let dim = 3;
    let mut ok = true;
    let mut notes = Vec::new();
    for noise in [NoiseModel::Gaussian { sigma: 0.5 }, NoiseModel::Ball { sigma: 0.5 }] {
        let sigma = noise.sigma();
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut second = 0.0;
        let mut max_norm = 0.0f64;
        for k in 0..n_draws {
            let xi = noise.draw(Seed(5), DrawKey { round: 1, inner: k, slot: 1 }, dim);
            let s2: f64 = xi.iter().map(|a| a * a).sum();
            second += s2;
            max_norm = max_norm.max(s2.sqrt());
            for i in 0..dim {
                sum[i] += xi[i];
                sq[i] += xi[i] * xi[i];
            }
        }
        let nf = n_draws as f64;
        let mut worst_z = 0.0f64;
        for i in 0..dim {
            let mean = sum[i] / nf;
            let se = ((sq[i] / nf - mean * mean) / nf).sqrt();
            worst_z = worst_z.max(mean.abs() / se);
        }
        let m2 = second / nf;
        ok &= worst_z <= 4.0 && m2 <= 1.05 * sigma * sigma;
        if let NoiseModel::Ball { .. } = noise {
            ok &= max_norm <= sigma;
        }
        notes.push(format!("{noise:?}: |z| {worst_z:.2}, E|xi|^2/sigma^2 {:.3}, max|xi| {max_norm:.4}", m2 / (sigma * sigma)));
    }
    let took = start.elapsed();
    Outcome {
        id: 5,
        title: "stochastic oracle axioms",
        passed: ok && took < Duration::from_secs(5),
        detail: format!("{}; {took:.2?}", notes.join("; ")),
    }
}

fn criterion_6() -> Outcome {
    let (r, took) = run(&preset("stoch-regret").unwrap());
    let c = r.check("mean_regret_stoch:w10").unwrap();
    let flagged = r.flagged.contains(&c.name);
    Outcome {
        id: 6,
        title: "stochastic regret bound (mean over seeds)",
        passed: r.rows.len() == 50 && c.passed && took < Duration::from_secs(60),
        detail: format!(
            "mean Reg {:.4e} <= bound {:.4e}{}; {took:.2?}",
            c.measured,
            c.bound,
            if flagged { " (within the 5% flag band)" } else { "" }
        ),
    }
}

fn criterion_7() -> Outcome {
    // the run returns an error instead of a report if any inner loop is capped
    let (r, _) = run(&preset("stoch-iteration").unwrap());
    let acc = violations(&r, "sfo_accounting");
    let q = violations(&r, "queries_stoch");
    let worst = r.rows.iter().map(|x| x.tau as f64 / x.query_bound.unwrap()).fold(0.0, f64::max);
    Outcome {
        id: 7,
        title: "stochastic call accounting and iteration bound",
        passed: r.rows.len() == 20 && acc == 0.0 && q == 0.0,
        detail: format!("accounting violations {acc}, bound violations {q}, max tau/bound {worst:.3e}, no capped runs"),
    }
}

fn criterion_8() -> Outcome {
    let (r, took) = run(&preset("offline-reduction").unwrap());
    let c = r.check("mean_stationarity").unwrap();
    let sfo = r.reported("mean_sfo_calls").unwrap().value;
    let formula = r.reported("offline_sfo_budget").unwrap().value;
    Outcome {
        id: 8,
        title: "offline reduction",
        passed: r.rows.len() == 30 && c.passed && took < Duration::from_secs(60),
        detail: format!(
            "w {}, T {}, mean stationarity {:.4e} <= eps {:.2}; SFO calls {sfo:.0} vs formula {formula:.3e}; {took:.2?}",
            r.rows[0].window, r.rows[0].horizon, c.measured, c.bound
        ),
    }
}

fn criterion_9() -> Outcome {
    let (r, _) = run(&preset("appendix-b").unwrap());
    let lo = r.check("target:mean_regret_per_round:w1").unwrap();
    let hi = r.check("target:mean_regret_per_round:w100").unwrap();
    Outcome {
        id: 9,
        title: "sign-flip separation",
        passed: lo.passed && hi.passed && r.rows.len() == 40,
        detail: format!("mean Reg_1/T {:.4} >= 0.4, mean Reg_100/T {:.2e} <= 0.05", lo.measured, hi.measured),
    }
}

fn ontap_with_period(period: f64, seed: u64) -> ExperimentConfig {
    let mut cfg = preset("ontap").unwrap();
    cfg.seed = seed;
    if let ProblemSpec::Ontap { period: p, .. } = &mut cfg.problem {
        *p = Some(period);
    }
    cfg
}

fn criterion_10() -> Outcome {
    let fd = ontap_fd_error(&default_instance(), 100, 10);
    let (r, _) = run(&preset("ontap").unwrap());
    let bounds_ok = violations(&r, "regret_det") == 0.0 && violations(&r, "queries_det") == 0.0;
    // period equal to the window against 3w/2, same seeds
    let w = 10.0;
    let (attuned, _) = run(&ontap_with_period(w, 7));
    let (detuned, _) = run(&ontap_with_period(1.5 * w, 7));
    let pairs: Vec<(f64, f64)> = attuned
        .rows
        .iter()
        .zip(&detuned.rows)
        .map(|(a, b)| (a.trajectory_variation, b.trajectory_variation))
        .collect();
    let smaller = pairs.iter().all(|(a, b)| a < b);
    let ratio = pairs.iter().map(|(a, b)| a / b).fold(0.0, f64::max);
    Outcome {
        id: 10,
        title: "OnTAP gradient and bounds",
        passed: fd <= 1e-5 && bounds_ok && smaller,
        detail: format!(
            "fd max rel error {fd:.2e}; regret/query violations {}/{}; V(period w)/V(period 3w/2) max {ratio:.3} over {} seeds",
            violations(&r, "regret_det"),
            violations(&r, "queries_det"),
            pairs.len()
        ),
    }
}

fn criterion_11() -> Outcome {
    let start = Instant::now();
    let q = vec![1.0, 0.3, -0.2, 0.3, -0.5, 0.1, -0.2, 0.1, 0.8];
    let c = vec![0.2, -0.4, 0.1];
    let game = QuadraticGame::new(q.clone(), c.clone(), vec![3], vec![1.0], 1.0).unwrap();
    let s = QuadraticDriftStream::from_parts(q, vec![0.0; 9], c, vec![0.0; 3], None, 30, 1.0).unwrap();
    let g = Regularizer::uniform_box(3, -1.0, 1.0);
    let l = game.smoothness();
    let eta = 0.5 / l;
    let sigma = 0.2;
    let mut step = StepConfig { eta, smoothness: l, window: 4, delta: 0.05, sigma: 0.0, horizon: 30, max_inner: 1 << 40 };
    let a = games::run_simultaneous(&game, SolverKind::Alg1, &step, &NoiseModel::Exact, Seed(1), None).unwrap();
    let b = run_alg1(&s, &g, &step, &g.default_start(3)).unwrap();
    let exact1 = a.players[0].rounds == b.rounds && a.players[0].final_x == b.final_x;
    step.sigma = sigma;
    step.delta = 1.1 * tsprox::solver::min_delta_finite(eta, l, sigma);
    let noise = NoiseModel::Ball { sigma };
    let a = games::run_simultaneous(&game, SolverKind::Alg2, &step, &noise, Seed(1), None).unwrap();
    let b = run_alg2(&s, &g, &step, &noise, &g.default_start(3), Seed(1)).unwrap();
    let exact2 = a.players[0].rounds == b.rounds && a.players[0].sfo_calls == b.sfo_calls;

    let (r, _) = run(&preset("game-equilibrium").unwrap());
    let missing = r.check("equilibrium_not_found").unwrap().measured;
    let fired: Vec<String> = r
        .rows
        .iter()
        .map(|x| format!("{}@[{},{}]", x.equilibrium_round.map_or("-".into(), |t| t.to_string()), x.window, x.horizon))
        .collect();
    let took = start.elapsed();
    Outcome {
        id: 11,
        title: "games",
        passed: exact1 && exact2 && missing == 0.0 && took < Duration::from_secs(30),
        detail: format!(
            "m=1 bit-exact alg1 {exact1}, alg2 {exact2}; first equilibrium round per seed {}; {took:.2?}",
            fired.join(" ")
        ),
    }
}

#[test]
fn acceptance() {
    let mut outcomes = criteria_1_to_3();
    outcomes.push(criterion_4());
    outcomes.push(criterion_5());
    outcomes.push(criterion_6());
    outcomes.push(criterion_7());
    outcomes.push(criterion_8());
    outcomes.push(criterion_9());
    outcomes.push(criterion_10());
    outcomes.push(criterion_11());
    // written to the raw handle so the lines survive output capture
    let mut out = std::io::stdout().lock();
    for o in &outcomes {
        writeln!(
            out,
            "{} criterion {:>2} {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.detail
        )
        .unwrap();
    }
    drop(out);
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
