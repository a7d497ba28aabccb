//! Cosine schedule values and the log-SNR timestep plan.

use lsd_calib::sampler::posterior;
use lsd_calib::schedule::{build_cosine_schedule, logsnr_timesteps};

fn main() -> lsd_calib::Result<()> {
    let sched = build_cosine_schedule(1000, 0.008)?;
    for t in [0, 1, 250, 500, 750, 999, 1000] {
        println!("t={t:4}  alpha_bar={:.6}  log_snr={:8.3}", sched.alpha_bar(t), sched.log_snr(t));
    }
    for nfe in [1, 5, 10] {
        let plan = logsnr_timesteps(&sched, nfe)?;
        println!("\nnfe={nfe}: {:?}", plan.steps());
        for (t, s) in plan.transitions() {
            let p = posterior(t, s, &sched)?;
            println!("  {t:4} -> {s:4}  x_t {:.4}  x0 {:.4}  var {:.3e}", p.x_coef, p.x0_coef, p.variance);
        }
    }
    Ok(())
}
