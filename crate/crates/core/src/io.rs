//! File emission and ingestion: trajectory CSV, report/verify JSON, and the
//! per-iteration trace. All writes go through a temp-file-then-rename so
//! readers never observe partial artifacts. Floats are written with the
//! shortest representation that parses back bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::descent::{IterationRecord, SolveReport};
use crate::error::{Error, Result};
use crate::grid::{DerivativeGrid, SampledTrajectory, StateGrid, TimeGrid};
use crate::problem::ProblemSpec;
use crate::verify::VerifyReport;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Write bytes to `path` atomically (write to a sibling temp file, then
/// rename over the target).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Trajectory CSV: header `t,x1..xn,z1..zn`, one row per node.
pub fn write_trajectory_csv(
    path: &Path,
    grid: &TimeGrid,
    x: &StateGrid,
    z: &DerivativeGrid,
) -> Result<()> {
    let n = x.n_coords();
    if z.n_coords() != n {
        return Err(Error::Dimension { what: "trajectory z".into(), expected: n, got: z.n_coords() });
    }
    if x.n_nodes() != grid.len() || z.n_nodes() != grid.len() {
        return Err(Error::Dimension { what: "trajectory nodes".into(), expected: grid.len(), got: x.n_nodes() });
    }
    let mut out = String::new();
    out.push('t');
    for i in 1..=n {
        let _ = write!(out, ",x{}", i);
    }
    for i in 1..=n {
        let _ = write!(out, ",z{}", i);
    }
    out.push('\n');
    for k in 0..grid.len() {
        let _ = write!(out, "{}", grid.node(k));
        for i in 0..n {
            let _ = write!(out, ",{}", x.get(k, i));
        }
        for i in 0..n {
            let _ = write!(out, ",{}", z.get(k, i));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Read a trajectory CSV back into `(t, x, z)`.
pub fn read_trajectory_csv(path: &Path) -> Result<(Vec<f64>, StateGrid, DerivativeGrid)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        message: "empty trajectory file".into(),
    })?;
    let columns = header.split(',').count();
    if columns < 3 || (columns - 1) % 2 != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("unexpected header `{}`", header),
        });
    }
    let n = (columns - 1) / 2;
    let mut t = Vec::new();
    let mut x_rows = Vec::new();
    let mut z_rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: {}", lineno + 2, e),
                })
            })
            .collect::<Result<_>>()?;
        if fields.len() != columns {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: expected {} fields, got {}", lineno + 2, columns, fields.len()),
            });
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: nonfinite value", lineno + 2),
            });
        }
        t.push(fields[0]);
        x_rows.push(fields[1..=n].to_vec());
        z_rows.push(fields[n + 1..].to_vec());
    }
    Ok((t, SampledTrajectory::from_rows(x_rows)?, SampledTrajectory::from_rows(z_rows)?))
}

/// Per-iteration trace CSV mirroring the report's iteration list.
pub fn write_trace_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut out = String::from("iter,phase,phi,chi,omega,total,grad_norm,step\n");
    for r in records {
        let phase = match r.phase {
            crate::descent::Phase::Fast => "fast",
            crate::descent::Phase::Slow => "slow",
        };
        let omega = r.omega.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iter, phase, r.phi, r.chi, omega, r.total, r.grad_norm, r.step
        );
    }
    atomic_write(path, out.as_bytes())
}

/// The full report document: the resolved problem and configuration (enough
/// to reproduce the run exactly), the solve report, and the embedded
/// verification report.
pub fn report_document(
    spec: &ProblemSpec,
    grid_nodes: usize,
    config: &crate::descent::DescentConfig,
    report: &SolveReport,
    verify: Option<&VerifyReport>,
) -> serde_json::Value {
    serde_json::json!({
        "problem": spec,
        "grid_nodes": grid_nodes,
        "config": config,
        "params": report.params,
        "solve": report,
        "verify": verify,
    })
}

/// Read a surface parameter vector from a JSON file: either a bare array or
/// any object with a top-level `params` array (report.json qualifies).
pub fn read_params_json(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    let array = match &value {
        serde_json::Value::Array(a) => a,
        serde_json::Value::Object(o) => o
            .get("params")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                message: "expected a `params` array".into(),
            })?,
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: "expected an array or an object with `params`".into(),
            })
        }
    };
    array
        .iter()
        .map(|v| {
            v.as_f64().ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                message: format!("non-numeric parameter {}", v),
            })
        })
        .collect()
}

/// Output paths of one solve run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
}

impl RunArtifacts {
    pub fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        Ok(RunArtifacts { out_dir: out_dir.to_path_buf() })
    }

    pub fn trajectory_csv(&self) -> PathBuf {
        self.out_dir.join("trajectory.csv")
    }

    pub fn report_json(&self) -> PathBuf {
        self.out_dir.join("report.json")
    }

    pub fn verify_json(&self) -> PathBuf {
        self.out_dir.join("verify.json")
    }

    pub fn trace_csv(&self) -> PathBuf {
        self.out_dir.join("trace.csv")
    }
}
