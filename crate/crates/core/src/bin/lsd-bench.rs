use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lsd_calib::bench::{cmd_compare, cmd_curves, cmd_run, cmd_simulate, BenchConfig, RunOptions};
use lsd_calib::surrogate::Buffering;
use lsd_calib::{Error, Result};

/// Synthetic benchmark for iterative camera-LiDAR calibration methods.
#[derive(Parser)]
#[command(name = "lsd-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Benchmark configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the configuration's `output_dir`, then `lsd-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(BenchConfig, PathBuf)> {
        let mut config = BenchConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        let out = self
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("lsd-out"));
        Ok((config, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes and perturbations into `<out>/dataset`.
    Simulate(ConfigArgs),
    /// Run every surrogate and method over the dataset.
    Run {
        #[command(flatten)]
        common: ConfigArgs,
        /// Existing dataset directory; simulated into `<out>/dataset` when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Rebuild the surrogate context before every evaluation.
        #[arg(long)]
        no_buffering: bool,
        /// Also time every method with and without buffering into timing.csv.
        #[arg(long)]
        timing: bool,
    },
    /// Write per-step error curves (curves.csv) for a run directory.
    Curves {
        run_dir: PathBuf,
    },
    /// Merge the reports of two or more runs over the same dataset.
    Compare {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => args.load().and_then(|(config, out)| {
            let dir = out.join("dataset");
            let manifest = cmd_simulate(&config, &dir)?;
            println!("wrote {} scenes to {}", manifest.scenes.len(), dir.display());
            Ok(())
        }),
        Command::Run {
            common,
            dataset,
            jobs,
            no_buffering,
            timing,
        } => common.load().and_then(|(config, out)| {
            let opts = RunOptions {
                jobs,
                buffering: if no_buffering { Buffering::Disabled } else { Buffering::Enabled },
                timing,
            };
            let report = cmd_run(&config, dataset.as_deref(), &out, &opts)?;
            print!("{}", report.to_table());
            Ok(())
        }),
        Command::Curves { run_dir } => cmd_curves(&run_dir).map(|path| println!("wrote {}", path.display())),
        Command::Compare { run_dirs, out } => cmd_compare(&run_dirs).and_then(|table| {
            print!("{table}");
            match out {
                Some(path) => write_text(&path, &table),
                None => Ok(()),
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lsd-bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
