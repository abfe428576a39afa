use std::io::Write;

use crate::error::{Error, Result};

use super::SummaryRow;

/// Column order of `summary.csv`.
pub const CSV_COLUMNS: [&str; 19] = [
    "seed",
    "window",
    "horizon",
    "solver",
    "eta",
    "delta",
    "sigma",
    "local_regret",
    "trajectory_variation",
    "tau",
    "sfo_calls",
    "regret_bound",
    "regret_pass",
    "query_bound",
    "query_pass",
    "decrease_violations",
    "tstar",
    "stationarity",
    "equilibrium_round",
];

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn record(r: &SummaryRow) -> [String; 19] {
    [
        r.seed.to_string(),
        r.window.to_string(),
        r.horizon.to_string(),
        match r.solver {
            crate::solver::SolverKind::Alg1 => "alg1".into(),
            crate::solver::SolverKind::Alg2 => "alg2".into(),
        },
        float(r.eta),
        float(r.delta),
        float(r.sigma),
        float(r.local_regret),
        float(r.trajectory_variation),
        r.tau.to_string(),
        r.sfo_calls.to_string(),
        float(r.regret_bound),
        r.regret_pass.to_string(),
        opt(r.query_bound, float),
        opt(r.query_pass, |b| b.to_string()),
        r.decrease_violations.to_string(),
        opt(r.tstar, |t| t.to_string()),
        opt(r.stationarity, float),
        opt(r.equilibrium_round, |t| t.to_string()),
    ]
}

/// Writes the header and one line per row; missing values are empty fields.
pub fn write_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record(record(r)).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
