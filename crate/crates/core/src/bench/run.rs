use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, BenchConfig};
use super::dataset::{cmd_simulate, load_dataset, Sample};
use super::{csv_field, to_json, write_file};
use crate::error::{Error, Result};
use crate::methods::{run_method, MethodSpec};
use crate::metrics::{aggregate, AggregateReport, RunRecord};
use crate::schedule::NoiseSchedule;
use crate::surrogate::{Buffering, Denoiser, SurrogateSpec};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const RUN_MANIFEST: &str = "run.json";
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
    pub buffering: Buffering,
    /// Also measure buffered and unbuffered wall time into `timing.csv`.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 0,
            buffering: Buffering::Enabled,
            timing: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub seed: u64,
    pub num_samples: usize,
    pub config_hash: String,
    pub dataset_hash: String,
    pub surrogates: Vec<String>,
    pub methods: Vec<String>,
}

fn run_seed(config: &BenchConfig, sample_id: u64, method: &MethodSpec, surrogate: &SurrogateSpec) -> u64 {
    derive_seed(&[
        b"run",
        &config.seed.to_le_bytes(),
        &sample_id.to_le_bytes(),
        method.label().as_bytes(),
        surrogate.label().as_bytes(),
    ])
}

fn run_one(
    config: &BenchConfig,
    sample: &Sample,
    surrogate: &SurrogateSpec,
    method: &MethodSpec,
    schedule: &NoiseSchedule,
    buffering: Buffering,
) -> Result<(RunRecord, usize)> {
    let t0 = sample.initial_extrinsic()?;
    let mut den = Denoiser::new(&sample.scene, surrogate, buffering);
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed(config, sample.scene.id, method, surrogate));
    let trajectory = run_method(method, &mut den, &t0, config.nfe, schedule, &mut rng)?;
    let record = RunRecord::from_trajectory(
        sample.scene.id,
        &surrogate.label(),
        &method.label(),
        &t0,
        &sample.scene.gt_extrinsic,
        &trajectory,
    );
    Ok((record, den.prepare_calls()))
}

/// Runs every (surrogate, method) pair on one sample. Each record comes with
/// the number of context preparations its run performed.
pub fn run_sample(
    config: &BenchConfig,
    sample: &Sample,
    schedule: &NoiseSchedule,
    buffering: Buffering,
) -> Result<Vec<(RunRecord, usize)>> {
    let mut out = Vec::with_capacity(config.surrogates.len() * config.methods.len());
    for surrogate in &config.surrogates {
        for method in &config.methods {
            out.push(run_one(config, sample, surrogate, method, schedule, buffering)?);
        }
    }
    Ok(out)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))
}

/// Runs all samples, returning records ordered by sample, then surrogate,
/// then method, whatever the worker count.
pub fn execute(config: &BenchConfig, samples: &[Sample], opts: &RunOptions) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let schedule = config.schedule()?;
    let per_sample: Vec<Vec<(RunRecord, usize)>> = pool(opts.jobs)?.install(|| {
        samples
            .par_iter()
            .map(|s| run_sample(config, s, &schedule, opts.buffering))
            .collect::<Result<_>>()
    })?;
    Ok(per_sample.into_iter().flatten().map(|(r, _)| r).collect())
}

/// Wall time and context preparations of one (surrogate, method) pair over
/// the whole dataset, with and without buffering.
#[derive(Clone, Debug, PartialEq)]
pub struct EfficiencyRow {
    pub surrogate: String,
    pub method: String,
    pub runs: usize,
    pub prepares_buffered: usize,
    pub prepares_unbuffered: usize,
    pub ms_buffered: f64,
    pub ms_unbuffered: f64,
}

impl EfficiencyRow {
    pub fn saving_percent(&self) -> f64 {
        100.0 * (1.0 - self.ms_buffered / self.ms_unbuffered)
    }
}

/// Sequential timing pass; the numbers depend on the machine.
pub fn measure_efficiency(config: &BenchConfig, samples: &[Sample]) -> Result<Vec<EfficiencyRow>> {
    let schedule = config.schedule()?;
    let mut rows = Vec::new();
    for surrogate in &config.surrogates {
        for method in &config.methods {
            let measure = |buffering| -> Result<(f64, usize)> {
                let start = Instant::now();
                let mut prepares = 0;
                for s in samples {
                    prepares += run_one(config, s, surrogate, method, &schedule, buffering)?.1;
                }
                Ok((start.elapsed().as_secs_f64() * 1e3, prepares))
            };
            let (ms_buffered, prepares_buffered) = measure(Buffering::Enabled)?;
            let (ms_unbuffered, prepares_unbuffered) = measure(Buffering::Disabled)?;
            rows.push(EfficiencyRow {
                surrogate: surrogate.label(),
                method: method.label(),
                runs: samples.len(),
                prepares_buffered,
                prepares_unbuffered,
                ms_buffered,
                ms_unbuffered,
            });
        }
    }
    Ok(rows)
}

fn timing_csv(rows: &[EfficiencyRow]) -> String {
    let mut s = String::from("surrogate,method,runs,prepares_buffered,prepares_unbuffered,ms_buffered,ms_unbuffered,saving_percent\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{:.3},{:.3},{:.2}\n",
            csv_field(&r.surrogate),
            csv_field(&r.method),
            r.runs,
            r.prepares_buffered,
            r.prepares_unbuffered,
            r.ms_buffered,
            r.ms_unbuffered,
            r.saving_percent()
        ));
    }
    s
}

/// Runs the benchmark into `out`. Without `dataset`, the dataset is
/// simulated into `out/dataset` first.
pub fn cmd_run(config: &BenchConfig, dataset: Option<&Path>, out: &Path, opts: &RunOptions) -> Result<AggregateReport> {
    config.validate()?;
    let (manifest, samples) = match dataset {
        Some(dir) => load_dataset(config, dir)?,
        None => {
            let dir = out.join("dataset");
            cmd_simulate(config, &dir)?;
            load_dataset(config, &dir)?
        }
    };
    let records = execute(config, &samples, opts)?;
    let report = aggregate(&records)?;

    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).map_err(|e| Error::Numerical(e.to_string()))?);
        lines.push('\n');
    }
    write_file(&out.join(RECORDS_FILE), lines.as_bytes())?;
    write_file(&out.join(SUMMARY_FILE), (to_json(&report)? + "\n").as_bytes())?;
    write_file(&out.join(REPORT_CSV), report.to_csv().as_bytes())?;
    write_file(&out.join(REPORT_TXT), report.to_table().as_bytes())?;
    let run_manifest = RunManifest {
        schema: config.schema,
        seed: config.seed,
        num_samples: config.num_samples,
        config_hash: config.config_hash(),
        dataset_hash: manifest.dataset_hash,
        surrogates: config.surrogates.iter().map(SurrogateSpec::label).collect(),
        methods: config.methods.iter().map(MethodSpec::label).collect(),
    };
    write_file(&out.join(RUN_MANIFEST), (to_json(&run_manifest)? + "\n").as_bytes())?;
    if opts.timing {
        let rows = measure_efficiency(config, &samples)?;
        write_file(&out.join(TIMING_FILE), timing_csv(&rows).as_bytes())?;
    }
    Ok(report)
}
