use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{RunManifest, RECORDS_FILE, RUN_MANIFEST, SUMMARY_FILE};
use super::{csv_field, from_json, read_file, write_file};
use crate::error::{Error, Result};
use crate::metrics::{best_index, higher_is_better, render_table, AggregateReport, RunRecord, REPORT_COLUMNS};

pub const CURVES_FILE: &str = "curves.csv";
pub const CURVE_COLUMNS: [&str; 11] = [
    "sample", "method", "step", "Rx", "Ry", "Rz", "tx", "ty", "tz", "rot_rmse", "trans_rmse",
];

/// One row of an error curve: errors after the `step`-th evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub sample: u64,
    pub method: String,
    pub step: usize,
    /// Degrees.
    pub rot: [f64; 3],
    /// Centimeters.
    pub trans: [f64; 3],
    pub rot_rmse: f64,
    pub trans_rmse: f64,
}

/// One row per (sample, method, step). When records span several
/// surrogates the method column reads `method@surrogate`.
pub fn curve_rows(records: &[RunRecord]) -> Vec<CurveRecord> {
    let multi = records.iter().any(|r| r.surrogate != records[0].surrogate);
    let mut rows = Vec::new();
    for r in records {
        let method = if multi {
            format!("{}@{}", r.method, r.surrogate)
        } else {
            r.method.clone()
        };
        for (i, e) in r.errors_by_step.iter().enumerate() {
            rows.push(CurveRecord {
                sample: r.sample_id,
                method: method.clone(),
                step: i + 1,
                rot: e.euler.to_array(),
                trans: [e.trans.x, e.trans.y, e.trans.z],
                rot_rmse: e.rot_rmse,
                trans_rmse: e.trans_rmse,
            });
        }
    }
    rows
}

pub fn write_curves(rows: &[CurveRecord]) -> String {
    let mut s = CURVE_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let mut cells = vec![r.sample.to_string(), csv_field(&r.method), r.step.to_string()];
        cells.extend(r.rot.iter().chain(&r.trans).map(|v| format!("{v:.9}")));
        cells.push(format!("{:.9}", r.rot_rmse));
        cells.push(format!("{:.9}", r.trans_rmse));
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn read_records(run_dir: &Path) -> Result<Vec<RunRecord>> {
    let path = run_dir.join(RECORDS_FILE);
    let text = read_file(&path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| from_json(l, &path))
        .collect()
}

/// Writes `curves.csv` into `run_dir` from its run records.
pub fn cmd_curves(run_dir: &Path) -> Result<PathBuf> {
    let records = read_records(run_dir)?;
    if records.is_empty() {
        return Err(Error::Config(format!("{} holds no run records", run_dir.display())));
    }
    let path = run_dir.join(CURVES_FILE);
    write_file(&path, write_curves(&curve_rows(&records)).as_bytes())?;
    Ok(path)
}

/// Merges the reports of several runs over the same dataset into one table,
/// marking the best value of each metric column with `*`.
pub fn cmd_compare(run_dirs: &[PathBuf]) -> Result<String> {
    if run_dirs.len() < 2 {
        return Err(Error::InvalidArgument("compare needs at least two runs".into()));
    }
    let mut runs = Vec::new();
    for dir in run_dirs {
        let mpath = dir.join(RUN_MANIFEST);
        let manifest: RunManifest = from_json(&read_file(&mpath)?, &mpath)?;
        let spath = dir.join(SUMMARY_FILE);
        let report: AggregateReport = from_json(&read_file(&spath)?, &spath)?;
        runs.push((dir, manifest, report));
    }
    let reference = &runs[0].1.dataset_hash;
    if let Some((dir, _, _)) = runs.iter().find(|(_, m, _)| &m.dataset_hash != reference) {
        return Err(Error::Config(format!(
            "{} was run on a different dataset than {}",
            dir.display(),
            run_dirs[0].display()
        )));
    }

    let rows: Vec<(String, &crate::metrics::MethodSummary)> = runs
        .iter()
        .flat_map(|(dir, _, report)| {
            let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
            report.rows.iter().map(move |r| (name.clone(), r))
        })
        .collect();
    let metric_columns = &REPORT_COLUMNS[4..];
    let values: Vec<[Option<f64>; 7]> = rows.iter().map(|(_, r)| r.metric_values()).collect();
    let best: Vec<Option<usize>> = (0..metric_columns.len())
        .map(|c| {
            let column: Vec<Option<f64>> = values.iter().map(|v| v[c]).collect();
            best_index(&column, higher_is_better(metric_columns[c]))
        })
        .collect();

    let header = [
        "Run", "Surrogate", "Method", "N", "3°3cm %", "5°5cm %", "ρ %", "Rot mean", "Rot med", "Trans mean", "Trans med",
    ];
    let table_rows: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, (run, r))| {
            let mut cells = vec![run.clone(), r.surrogate.clone(), r.method.clone(), r.samples.to_string()];
            for (c, v) in values[i].iter().enumerate() {
                let mark = if best[c] == Some(i) { "*" } else { " " };
                cells.push(v.map_or_else(|| "N/A ".to_string(), |x| format!("{x:.2}{mark}")));
            }
            cells
        })
        .collect();
    Ok(render_compare(&header, &table_rows))
}

// The run and surrogate columns are left-aligned like the method column.
fn render_compare(header: &[&str], rows: &[Vec<String>]) -> String {
    let joined: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![format!("{} {}", r[0], r[1]), r[2].clone()];
            v.extend_from_slice(&r[3..]);
            v
        })
        .collect();
    let mut h = vec![format!("{} / {}", header[0], header[1])];
    h.extend(header[2..].iter().map(|s| s.to_string()));
    let h: Vec<&str> = h.iter().map(String::as_str).collect();
    render_table(&h, &joined)
}
