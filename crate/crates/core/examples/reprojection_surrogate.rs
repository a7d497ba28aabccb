//! The geometric surrogate: RANSAC screening followed by robust
//! Gauss-Newton on reprojection error.

use lsd_calib::bench::{generate_samples, BenchConfig};
use lsd_calib::metrics::error_transform;
use lsd_calib::scene::SceneConfig;
use lsd_calib::surrogate::{denoise, prepare, SurrogateSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lsd_calib::Result<()> {
    let config = BenchConfig {
        num_samples: 3,
        scene: SceneConfig { outlier_fraction: 0.2, ..SceneConfig::default() },
        ..BenchConfig::default()
    };
    let spec = SurrogateSpec::reprojection(3, 2.0);
    for s in generate_samples(&config)? {
        let ctx = prepare(&s.scene, &spec)?;
        println!(
            "scene {}: {} correspondences, {} screened as outliers",
            s.scene.id,
            ctx.correspondence_count().unwrap_or(0),
            ctx.screened_out().unwrap_or(0)
        );
        let mut current = s.initial_extrinsic()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for step in 0..=3 {
            let e = error_transform(&current, &s.scene.gt_extrinsic);
            println!("  after {step} calls: {:7.4} deg  {:7.4} cm", e.rot_rmse, e.trans_rmse);
            let c = denoise(&ctx, &current, &mut rng)?;
            current = lsd_calib::lie::exp_map(&c.twist)?.compose(&current);
        }
    }
    Ok(())
}
