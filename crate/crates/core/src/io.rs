//! Serialization: instance/field JSON files and the tidy CSV emitters used
//! for figure data. All floating-point output uses 17 significant digits so
//! runs are reproducible byte-for-byte.

use crate::anneal::{FailureStats, InstanceSweep};
use crate::cd::TrajectoryRecord;
use crate::models::{IsingInstance, TransverseFields};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

/// 17 significant digits, scientific notation.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let wrap = |source| IoError::File {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(wrap)?;
    file.write_all(bytes).map_err(wrap)?;
    file.flush().map_err(wrap)
}

pub fn read_instance(path: &Path) -> Result<IsingInstance, IoError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_instance(path: &Path, instance: &IsingInstance) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(instance).expect("instance serializes");
    write_bytes(path, text.as_bytes())
}

pub fn read_fields(path: &Path) -> Result<TransverseFields, IoError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Scalar trajectory for the benchmark-model figure: time against the mean
/// z magnetization, from the strided samples of a trajectory record.
pub fn magnetization_csv(record: &TrajectoryRecord) -> String {
    let mut out = String::from("t,m_z\n");
    for s in &record.samples {
        out.push_str(&fmt_f64(s.t));
        out.push(',');
        out.push_str(&fmt_f64(s.state.mean_mz()));
        out.push('\n');
    }
    out
}

/// Full per-spin trajectory dump: t, spin index, components, alignment, CD
/// field magnitude.
pub fn trajectory_csv(record: &TrajectoryRecord) -> String {
    let mut out = String::from("t,i,m_x,m_y,m_z,C_i,|f_i|\n");
    for s in &record.samples {
        for (i, m) in s.state.spins().iter().enumerate() {
            out.push_str(&fmt_f64(s.t));
            out.push(',');
            out.push_str(&i.to_string());
            out.push(',');
            out.push_str(&fmt_f64(m.x));
            out.push(',');
            out.push_str(&fmt_f64(m.y));
            out.push(',');
            out.push_str(&fmt_f64(m.z));
            out.push(',');
            out.push_str(&fmt_f64(s.c[i]));
            out.push(',');
            out.push_str(&fmt_f64(s.f_norm.get(i).copied().unwrap_or(f64::NAN)));
            out.push('\n');
        }
    }
    out
}

/// Per-run results: one row per (L, M checkpoint, instance). Runs with no
/// valid repetition report an infinite estimate.
pub fn results_csv(l: usize, m_values: &[usize], sweeps: &[InstanceSweep]) -> String {
    let mut out = String::from("L,M,instance_seed,E_g,E_est,delta,failure,criticality\n");
    for sweep in sweeps {
        for (c, &m) in m_values.iter().enumerate() {
            let e_est = sweep.e_best[c].unwrap_or(f64::INFINITY);
            let delta = ((e_est - sweep.e_g) / sweep.e_g).abs();
            let failure = delta > crate::anneal::FAILURE_THRESHOLD;
            out.push_str(&format!(
                "{l},{m},{seed},{eg},{ee},{d},{f},{c}\n",
                seed = sweep.instance_seed,
                eg = fmt_f64(sweep.e_g),
                ee = fmt_f64(e_est),
                d = fmt_f64(delta),
                f = failure as u8,
                c = (sweep.n_halted > 0) as u8,
            ));
        }
    }
    out
}

/// Ensemble summary: one row per (L, M) grid point.
pub fn summary_csv(stats: &[FailureStats]) -> String {
    let mut out = String::from("L,M,n_instances,P_f,stderr\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.l,
            s.m,
            s.n_instances,
            fmt_f64(s.p_f),
            fmt_f64(s.stderr)
        ));
    }
    out
}

/// Parses a summary CSV produced by [`summary_csv`] (or an equivalent file
/// with the same header).
pub fn parse_summary_csv(path: &Path, text: &str) -> Result<Vec<FailureStats>, IoError> {
    let err = |message: String| IoError::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err("empty file".into()))?;
    let expected = "L,M,n_instances,P_f,stderr";
    if header.trim() != expected {
        return Err(err(format!(
            "unexpected header {header:?}, expected {expected:?}"
        )));
    }
    let mut stats = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(err(format!("line {}: expected 5 columns", lineno + 2)));
        }
        let field = |i: usize| -> Result<f64, IoError> {
            cols[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| err(format!("line {}: column {}: {e}", lineno + 2, i + 1)))
        };
        stats.push(FailureStats {
            l: field(0)? as usize,
            m: field(1)? as usize,
            n_instances: field(2)? as usize,
            n_failures: (field(3)? * field(2)?).round() as usize,
            p_f: field(3)?,
            stderr: field(4)?,
        });
    }
    Ok(stats)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    write_bytes(path, text.as_bytes())
}
