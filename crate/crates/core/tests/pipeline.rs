use lsd_calib::bench::{generate_samples, BenchConfig};
use lsd_calib::lie::{exp_map, log_map, Twist};
use lsd_calib::methods::{run_method, MethodSpec};
use lsd_calib::sampler::ReverseStepMode;
use lsd_calib::scene::{generate_scene, project_point, render_projection_map, SceneConfig};
use lsd_calib::schedule::build_cosine_schedule;
use lsd_calib::surrogate::{prepare, surrogate_x0, Buffering, Denoiser, SurrogateSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn surrogates() -> Vec<SurrogateSpec> {
    vec![
        SurrogateSpec::oracle(),
        SurrogateSpec::contraction(0.5, 0.02),
        SurrogateSpec::range_dependent(0.9, 2.0, 0.01),
        SurrogateSpec::reprojection(3, 2.0),
    ]
}

fn methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::single(),
        MethodSpec::naiter(),
        MethodSpec::lsd(ReverseStepMode::PosteriorMean),
        MethodSpec::lsd(ReverseStepMode::PosteriorStochastic),
        MethodSpec::lsd(ReverseStepMode::OdeFirstOrder),
        MethodSpec::nlsd(0.1),
    ]
}

#[test]
fn buffering_is_transparent_for_every_surrogate_and_method() {
    let cfg = BenchConfig {
        num_samples: 2,
        ..BenchConfig::default()
    };
    let samples = generate_samples(&cfg).unwrap();
    let sched = build_cosine_schedule(1000, 0.008).unwrap();
    for sample in &samples {
        let t0 = sample.initial_extrinsic().unwrap();
        for spec in surrogates() {
            for m in methods() {
                let run = |buffering| {
                    let mut den = Denoiser::new(&sample.scene, &spec, buffering);
                    let tr = run_method(&m, &mut den, &t0, 10, &sched, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
                    (tr, den.prepare_calls())
                };
                let (a, pa) = run(Buffering::Enabled);
                let (b, pb) = run(Buffering::Disabled);
                assert_eq!(a, b, "{} / {}", spec.label(), m.label());
                assert_eq!(pa, 1);
                assert_eq!(pb, a.len());
            }
        }
    }
}

#[test]
fn oracle_surrogate_estimate_ignores_the_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scene = generate_scene(&SceneConfig::default(), 8, &mut rng).unwrap();
    let t0 = exp_map(&Twist::from_array([0.08, -0.1, 0.05, -0.2, 0.15, 0.1])).unwrap().compose(&scene.gt_extrinsic);
    let delta = log_map(&scene.gt_extrinsic.compose(&t0.inverse())).unwrap();
    let ctx = prepare(&scene, &SurrogateSpec::oracle()).unwrap();
    for _ in 0..100 {
        let x_t = Twist::from_array(std::array::from_fn(|_| rng.random_range(-0.5..0.5)));
        let (x0, _) = surrogate_x0(&ctx, &x_t, &t0, &mut rng).unwrap();
        assert!((x0 - delta).norm_inf() < 1e-10);
    }
}

#[test]
fn noise_free_scene_reprojects_exactly() {
    let cfg = SceneConfig {
        pixel_noise_sigma: 0.0,
        outlier_fraction: 0.0,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg, 4, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    for o in &scene.observations {
        let px = project_point(&scene.points[o.point_index], &scene.gt_extrinsic, &scene.intrinsics).unwrap();
        assert!((px - o.pixel).norm() < 1e-9);
    }
}

#[test]
fn lsd_projection_map_ends_closer_to_ground_truth() {
    let cfg = BenchConfig {
        num_samples: 1,
        ..BenchConfig::default()
    };
    let sample = &generate_samples(&cfg).unwrap()[0];
    let t0 = sample.initial_extrinsic().unwrap();
    let spec = SurrogateSpec::reprojection(3, 2.0);
    let mut den = Denoiser::new(&sample.scene, &spec, Buffering::Enabled);
    let sched = build_cosine_schedule(1000, 0.008).unwrap();
    let tr = run_method(&MethodSpec::lsd(ReverseStepMode::PosteriorMean), &mut den, &t0, 10, &sched, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let gt = render_projection_map(&sample.scene, &sample.scene.gt_extrinsic);
    let overlap = |m: &lsd_calib::scene::DepthMap| {
        let mut n = 0;
        for y in 0..gt.height {
            for x in 0..gt.width {
                n += usize::from(gt.get(x, y).is_some() && m.get(x, y).is_some());
            }
        }
        n
    };
    let before = overlap(&render_projection_map(&sample.scene, &t0));
    let after = overlap(&render_projection_map(&sample.scene, &tr.final_estimate));
    assert!(after > before, "{after} <= {before}");
    assert!(after * 4 >= gt.occupied() * 3, "{after} of {}", gt.occupied());
}
