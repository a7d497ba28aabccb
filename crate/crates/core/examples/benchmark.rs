//! End-to-end benchmark in a temporary directory: simulate, run, curves and
//! compare, the same steps the `lsd-bench` binary exposes.

use lsd_calib::bench::{cmd_compare, cmd_curves, cmd_run, cmd_simulate, BenchConfig, RunOptions};
use lsd_calib::surrogate::SurrogateSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("lsd-bench-example-{}", std::process::id()));
    let base = BenchConfig { num_samples: 50, ..BenchConfig::default() };
    let dataset = dir.join("dataset");
    let manifest = cmd_simulate(&base, &dataset)?;
    println!("simulated {} samples into {}", manifest.num_samples, dataset.display());

    let noisy = dir.join("range_dependent");
    let report = cmd_run(&base, Some(&dataset), &noisy, &RunOptions::default())?;
    println!("\n{}", report.to_table());
    println!("curves: {}", cmd_curves(&noisy)?.display());

    let oracle = BenchConfig { surrogates: vec![SurrogateSpec::oracle()], ..base };
    let exact = dir.join("oracle");
    cmd_run(&oracle, Some(&dataset), &exact, &RunOptions::default())?;
    println!("\n{}", cmd_compare(&[noisy, exact])?);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
