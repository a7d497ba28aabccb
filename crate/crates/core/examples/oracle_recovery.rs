//! With an exact denoiser every method lands on the ground truth.

use lsd_calib::bench::{generate_samples, BenchConfig};
use lsd_calib::methods::{run_method, MethodSpec};
use lsd_calib::metrics::error_transform;
use lsd_calib::sampler::ReverseStepMode;
use lsd_calib::schedule::build_cosine_schedule;
use lsd_calib::surrogate::{Buffering, Denoiser, SurrogateSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lsd_calib::Result<()> {
    let config = BenchConfig { num_samples: 5, ..BenchConfig::default() };
    let samples = generate_samples(&config)?;
    let sched = build_cosine_schedule(1000, 0.008)?;
    let oracle = SurrogateSpec::oracle();
    let methods = [
        MethodSpec::single(),
        MethodSpec::naiter(),
        MethodSpec::lsd(ReverseStepMode::PosteriorMean),
        MethodSpec::nlsd(0.0),
    ];
    for s in &samples {
        let t0 = s.initial_extrinsic()?;
        let start = error_transform(&t0, &s.scene.gt_extrinsic);
        print!("sample {}  start {:6.3} deg {:6.3} cm |", s.scene.id, start.rot_rmse, start.trans_rmse);
        for m in &methods {
            let mut den = Denoiser::new(&s.scene, &oracle, Buffering::Enabled);
            let tr = run_method(m, &mut den, &t0, 10, &sched, &mut ChaCha8Rng::seed_from_u64(0))?;
            let e = error_transform(&tr.final_estimate, &s.scene.gt_extrinsic);
            print!("  {} {:.1e}", m.label(), e.rot_rmse.max(e.trans_rmse));
        }
        println!();
    }
    Ok(())
}
