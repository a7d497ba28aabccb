//! Reusing the prepared surrogate context across evaluations gives the
//! same answer with one preparation instead of one per step.

use lsd_calib::bench::{generate_samples, measure_efficiency, BenchConfig};
use lsd_calib::methods::MethodSpec;
use lsd_calib::sampler::ReverseStepMode;
use lsd_calib::scene::SceneConfig;
use lsd_calib::surrogate::SurrogateSpec;

fn main() -> lsd_calib::Result<()> {
    let config = BenchConfig {
        num_samples: 10,
        scene: SceneConfig { num_points: 5000, ..SceneConfig::default() },
        surrogates: vec![SurrogateSpec::reprojection(3, 2.0)],
        methods: vec![MethodSpec::naiter(), MethodSpec::lsd(ReverseStepMode::PosteriorMean)],
        ..BenchConfig::default()
    };
    let samples = generate_samples(&config)?;
    for row in measure_efficiency(&config, &samples)? {
        println!(
            "{:6} runs={} prepares {:3} vs {:3}  {:8.1} ms vs {:8.1} ms  saving {:.1}%",
            row.method,
            row.runs,
            row.prepares_buffered,
            row.prepares_unbuffered,
            row.ms_buffered,
            row.ms_unbuffered,
            row.saving_percent()
        );
    }
    Ok(())
}
