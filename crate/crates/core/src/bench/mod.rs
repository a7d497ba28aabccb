//! Benchmark harness: configuration, synthetic datasets, method execution,
//! reports, error curves and run comparison.
//!
//! Everything written by [`cmd_simulate`] and [`cmd_run`] is a pure function
//! of the configuration (including its seed), independent of worker count and
//! of context buffering.

mod compare;
mod config;
mod dataset;
mod run;

pub use compare::{cmd_compare, cmd_curves, curve_rows, write_curves, CurveRecord, CURVE_COLUMNS};
pub use config::{derive_seed, BenchConfig, ScheduleConfig, CONFIG_SCHEMA};
pub use dataset::{cmd_simulate, generate_samples, load_dataset, DatasetManifest, Sample};
pub use run::{
    cmd_run, execute, measure_efficiency, run_sample, EfficiencyRow, RunManifest, RunOptions, RECORDS_FILE,
    REPORT_CSV, REPORT_TXT, RUN_MANIFEST, SUMMARY_FILE, TIMING_FILE,
};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("serialization failed: {e}")))
}

pub(crate) fn from_json<T: serde::de::DeserializeOwned>(text: &str, what: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("cannot parse {}: {e}", what.display())))
}

/// Quotes a CSV field when it contains a delimiter, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
