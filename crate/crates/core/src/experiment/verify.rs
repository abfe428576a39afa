use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::GameTrace;
use crate::metrics::BoundReport;

use super::{build_problem, evaluate, execute, Built, Executed, TraceRecord, TRACE_SCHEMA};

/// Re-verification result for one trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub path: PathBuf,
    pub checks: Vec<BoundReport>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub files: Vec<FileReport>,
    pub passed: bool,
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() || p.extension().is_some_and(|e| e == "json") {
                collect(&p, out)?;
            }
        }
    } else if path.exists() {
        out.push(path.to_path_buf());
    } else {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )));
    }
    Ok(())
}

/// Trace files under `paths`; directories are searched recursively and
/// JSON files that are not trace records (such as `report.json`) skipped.
fn trace_files(paths: &[PathBuf]) -> Result<Vec<(PathBuf, TraceRecord)>> {
    let mut files = Vec::new();
    for p in paths {
        collect(p, &mut files)?;
    }
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f)?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", f.display())))?;
        match value.get("schema").and_then(|s| s.as_str()) {
            Some(TRACE_SCHEMA) => {
                let rec: TraceRecord = serde_json::from_value(value)
                    .map_err(|e| Error::Schema(format!("{}: {e}", f.display())))?;
                out.push((f, rec));
            }
            Some(other) => {
                return Err(Error::Schema(format!("{}: unknown schema {other:?}", f.display())))
            }
            None => {}
        }
    }
    Ok(out)
}

fn verify_record(rec: &TraceRecord) -> Result<Vec<BoundReport>> {
    let unit = &rec.unit;
    let built = build_problem(
        &unit.problem,
        unit.step.horizon,
        unit.problem_seed,
        unit.regularizer.as_ref(),
    )?;
    let game = match (&built, &rec.profiles) {
        (Built::Game(_), Some(profiles)) => Some(GameTrace {
            players: rec.traces.clone(),
            profiles: profiles.clone(),
            final_profile: Vec::new(),
        }),
        (Built::Game(_), None) => return Err(Error::Schema("game trace without profiles".into())),
        (Built::Single { .. }, _) => {
            if rec.traces.len() != 1 {
                return Err(Error::Schema(format!("expected one trace, found {}", rec.traces.len())));
            }
            None
        }
    };
    let recorded = Executed {
        built,
        traces: rec.traces.clone(),
        game,
    };
    let (_, mut checks) = evaluate(unit, &recorded, &rec.extras)?;
    let replay = execute(unit)?;
    let same = replay.traces == rec.traces
        && match (&replay.game, &rec.profiles) {
            (Some(g), Some(p)) => &g.profiles == p,
            (None, None) => true,
            _ => false,
        };
    checks.push(BoundReport::equality("replay", if same { 1.0 } else { 0.0 }, 1.0));
    Ok(checks)
}

/// Recomputes every per-run check from stored traces and replays each run.
/// An empty set of trace files gives an empty, passing report.
pub fn verify_bounds(paths: &[PathBuf]) -> Result<VerifyReport> {
    let mut report = VerifyReport {
        files: Vec::new(),
        passed: true,
    };
    for (path, rec) in trace_files(paths)? {
        let checks = verify_record(&rec).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let passed = checks.iter().all(|c| c.passed);
        report.passed &= passed;
        report.files.push(FileReport { path, checks, passed });
    }
    Ok(report)
}
