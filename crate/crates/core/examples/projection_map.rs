//! Renders LiDAR depth projected through the initial, LSD-refined and true
//! extrinsics as PGM images.
//!
//! Usage: cargo run --example projection_map -- [out_dir]

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use lsd_calib::bench::{generate_samples, BenchConfig};
use lsd_calib::methods::{run_method, MethodSpec};
use lsd_calib::sampler::ReverseStepMode;
use lsd_calib::scene::render_projection_map;
use lsd_calib::schedule::build_cosine_schedule;
use lsd_calib::surrogate::{Buffering, Denoiser, SurrogateSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "projection_maps".into()));
    std::fs::create_dir_all(&out)?;
    let config = BenchConfig { num_samples: 1, ..BenchConfig::default() };
    let sample = &generate_samples(&config)?[0];
    let t0 = sample.initial_extrinsic()?;
    let spec = SurrogateSpec::reprojection(3, 2.0);
    let mut den = Denoiser::new(&sample.scene, &spec, Buffering::Enabled);
    let sched = build_cosine_schedule(1000, 0.008)?;
    let lsd = MethodSpec::lsd(ReverseStepMode::PosteriorMean);
    let tr = run_method(&lsd, &mut den, &t0, 10, &sched, &mut ChaCha8Rng::seed_from_u64(0))?;
    let max_depth = sample.scene.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    for (name, t) in [("initial", t0), ("lsd", tr.final_estimate), ("ground_truth", sample.scene.gt_extrinsic)] {
        let map = render_projection_map(&sample.scene, &t);
        let path = out.join(format!("{name}.pgm"));
        map.write_pgm(max_depth, BufWriter::new(File::create(&path)?))?;
        println!("{}: {} projected pixels", path.display(), map.occupied());
    }
    Ok(())
}
