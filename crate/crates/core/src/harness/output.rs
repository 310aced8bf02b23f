//! CSV and JSON artifacts.
//!
//! Series files share one schema: header `k,opt_err,consensus_err,tracking_err,algo`,
//! values with 17 significant digits, LF line endings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::Serialize;

use super::{HarnessError, Instance, RunConfig, RunOutput, SweepOutput};
use crate::engine::MetricsRow;
use crate::oracle::Problem;
use crate::topology::ValidationReport;

pub const SERIES_HEADER: &str = "k,opt_err,consensus_err,tracking_err,algo";

/// 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_rows(buf: &mut String, rows: &[MetricsRow], algo: &str) {
    for r in rows {
        writeln!(
            buf,
            "{},{},{},{},{algo}",
            r.k,
            fmt_f64(r.opt_err),
            fmt_f64(r.consensus_err),
            fmt_f64(r.tracking_err)
        )
        .expect("writing to a String");
    }
}

/// DSGT rows first, then centralized rows.
pub fn series_csv(dsgt: Option<&[MetricsRow]>, centralized: Option<&[MetricsRow]>) -> String {
    let mut buf = String::from(SERIES_HEADER);
    buf.push('\n');
    if let Some(rows) = dsgt {
        push_rows(&mut buf, rows, "dsgt");
    }
    if let Some(rows) = centralized {
        push_rows(&mut buf, rows, "centralized");
    }
    buf
}

/// One parsed series line.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRecord {
    pub row: MetricsRow,
    pub algo: String,
}

pub fn parse_series_csv(text: &str) -> Result<Vec<SeriesRecord>, HarnessError> {
    let mut lines = text.split('\n');
    if lines.next() != Some(SERIES_HEADER) {
        return Err(HarnessError::Config("series header mismatch".into()));
    }
    let bad = |i: usize, what: &str| HarnessError::Config(format!("series line {}: {what}", i + 2));
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i, "expected 5 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i, &e.to_string()));
            Ok(SeriesRecord {
                row: MetricsRow {
                    k: f[0].parse().map_err(|_| bad(i, "bad iteration"))?,
                    opt_err: num(f[1])?,
                    consensus_err: num(f[2])?,
                    tracking_err: num(f[3])?,
                },
                algo: f[4].to_string(),
            })
        })
        .collect()
}

pub fn read_series_csv(path: &Path) -> Result<Vec<SeriesRecord>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_series_csv(&text)
}

pub fn matrix_csv(m: ArrayView2<f64>) -> String {
    let mut buf = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        buf.push_str(&cells.join(","));
        buf.push('\n');
    }
    buf
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Config(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write(path, &text)
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Writes the instance's drawn parameters: `xtilde.csv` for ridge,
/// `targets.csv` for the quadratic problem.
fn write_problem_artifact(dir: &Path, inst: &Instance) -> Result<PathBuf, HarnessError> {
    let (name, m) = match &inst.problem {
        Problem::Ridge(r) => ("xtilde.csv", r.x_tilde().view()),
        Problem::Quadratic(q) => ("targets.csv", q.targets().view()),
    };
    let path = dir.join(name);
    write(&path, &matrix_csv(m))?;
    Ok(path)
}

/// Writes `series.csv`, `steady.json`, `theory.json` (when available),
/// `wmatrix.csv`, the problem artifact, `meta.json`, and with
/// `per_replication` one `replications/rep_<r>.csv` per replication.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    ensure_dir(dir)?;
    write(
        &dir.join("series.csv"),
        &series_csv(out.dsgt.as_deref(), out.centralized.as_deref()),
    )?;
    write_json(&dir.join("steady.json"), &out.steady)?;
    if let Some(th) = &out.theory {
        write_json(&dir.join("theory.json"), th)?;
    }
    write(&dir.join("wmatrix.csv"), &matrix_csv(out.instance.network.weights().view()))?;
    write_problem_artifact(dir, &out.instance)?;
    write_json(&dir.join("meta.json"), &out.meta)?;
    if let Some(reps) = &out.replications {
        let sub = dir.join("replications");
        ensure_dir(&sub)?;
        for (r, s) in reps.iter().enumerate() {
            write(
                &sub.join(format!("rep_{r}.csv")),
                &series_csv(s.dsgt.as_deref(), s.centralized.as_deref()),
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TopologySummary {
    pub n: usize,
    pub rho_w: f64,
    pub dev_norm: f64,
    pub checks: ValidationReport,
}

/// Writes `wmatrix.csv` and `topology.json` for the configured network.
pub fn write_topology(dir: &Path, cfg: &RunConfig, inst: &Instance) -> Result<TopologySummary, HarnessError> {
    ensure_dir(dir)?;
    let summary = TopologySummary {
        n: inst.n(),
        rho_w: inst.network.rho_w(),
        dev_norm: inst.network.dev_norm_with(cfg.dev_norm),
        checks: inst.validation,
    };
    write(&dir.join("wmatrix.csv"), &matrix_csv(inst.network.weights().view()))?;
    write_json(&dir.join("topology.json"), &summary)?;
    Ok(summary)
}

/// File name of the series for agent count `n` in a sweep directory.
pub fn sweep_series_name(n: usize) -> String {
    format!("series_n{n}.csv")
}

/// Writes one series file per agent count and `summary.json`.
pub fn write_sweep(dir: &Path, sweep: &SweepOutput) -> Result<(), HarnessError> {
    ensure_dir(dir)?;
    for (n, out) in sweep.summary.values.iter().zip(&sweep.runs) {
        write(
            &dir.join(sweep_series_name(*n)),
            &series_csv(out.dsgt.as_deref(), out.centralized.as_deref()),
        )?;
    }
    write_json(&dir.join("summary.json"), &sweep.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
        for v in [0.1, 1.0 / 3.0, 2.5e-300, 123456.789] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn series_roundtrip() {
        let rows = vec![
            MetricsRow {
                k: 0,
                opt_err: 1.0 / 3.0,
                consensus_err: 0.0,
                tracking_err: 2.0,
            },
            MetricsRow {
                k: 1,
                opt_err: 1e-20,
                consensus_err: 0.5,
                tracking_err: 0.25,
            },
        ];
        let text = series_csv(Some(&rows), Some(&rows[..1]));
        assert!(text.starts_with("k,opt_err,consensus_err,tracking_err,algo\n"));
        assert!(!text.contains('\r'));
        let parsed = parse_series_csv(&text).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[1].row, rows[1]);
        assert_eq!(parsed[2].algo, "centralized");
        assert!(parse_series_csv("k,x\n").is_err());
    }
}
