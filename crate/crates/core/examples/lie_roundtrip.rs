//! Exp/log round trips on random twists, and the near-pi singularity.

use lsd_calib::lie::{euler_from_rotation, exp_map, log_map, Twist};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lsd_calib::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let xi = Twist::from_array(std::array::from_fn(|i| {
            if i < 3 { rng.random_range(-2.0..2.0) } else { rng.random_range(-1.0..1.0) }
        }));
        if xi.to_array()[3..].iter().map(|v| v * v).sum::<f64>().sqrt() > 3.0 {
            continue;
        }
        let back = log_map(&exp_map(&xi)?)?;
        worst = worst.max((back - xi).norm_inf());
    }
    println!("max |log(exp(xi)) - xi| over 10000 twists: {worst:.3e}");

    let t = exp_map(&Twist::rotation(0.1, -0.2, 0.3))?;
    let e = euler_from_rotation(&t);
    let [rx, ry, rz] = e.to_array();
    println!("XYZ euler angles of a 0.37 rad rotation: {rx:.3} {ry:.3} {rz:.3} deg");

    let near_pi = exp_map(&Twist::rotation(std::f64::consts::PI - 1e-9, 0.0, 0.0))?;
    match log_map(&near_pi) {
        Ok(xi) => println!("near pi: {:?}", xi.to_array()),
        Err(e) => println!("near pi: {e}"),
    }
    Ok(())
}
