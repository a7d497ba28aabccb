//! Per-step error curves of the four methods under a noisy,
//! range-dependent surrogate.

use lsd_calib::bench::{generate_samples, BenchConfig};
use lsd_calib::methods::{run_method, MethodSpec};
use lsd_calib::metrics::{aggregate, RunRecord};
use lsd_calib::sampler::ReverseStepMode;
use lsd_calib::schedule::build_cosine_schedule;
use lsd_calib::surrogate::{Buffering, Denoiser, SurrogateSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lsd_calib::Result<()> {
    let config = BenchConfig { num_samples: 100, ..BenchConfig::default() };
    let samples = generate_samples(&config)?;
    let sched = build_cosine_schedule(1000, 0.008)?;
    let spec = SurrogateSpec::range_dependent(0.9, 2.0, 0.01);
    let methods = [
        MethodSpec::single(),
        MethodSpec::naiter(),
        MethodSpec::nlsd(0.1),
        MethodSpec::lsd(ReverseStepMode::PosteriorMean),
    ];
    let mut records = Vec::new();
    for m in &methods {
        let mut curve = [0.0; 10];
        for s in &samples {
            let t0 = s.initial_extrinsic()?;
            let mut den = Denoiser::new(&s.scene, &spec, Buffering::Enabled);
            let mut rng = ChaCha8Rng::seed_from_u64(s.scene.id);
            let tr = run_method(m, &mut den, &t0, 10, &sched, &mut rng)?;
            let r = RunRecord::from_trajectory(s.scene.id, &spec.label(), &m.label(), &t0, &s.scene.gt_extrinsic, &tr);
            for (c, e) in curve.iter_mut().zip(&r.errors_by_step) {
                *c += e.rot_rmse / samples.len() as f64;
            }
            records.push(r);
        }
        let shown: Vec<String> = curve.iter().take(if m.label() == "Single" { 1 } else { 10 }).map(|v| format!("{v:.3}")).collect();
        println!("{:7} mean rot rmse by step: {}", m.label(), shown.join(" "));
    }
    println!("\n{}", aggregate(&records)?.to_table());
    Ok(())
}
