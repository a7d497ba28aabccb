//! Cosine noise schedule and log-SNR timestep planning.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOTAL_STEPS: usize = 1000;
pub const DEFAULT_OFFSET: f64 = 0.008;

/// Bounds applied to `alpha_bar` before taking the log-SNR.
pub const LOGSNR_CLAMP: (f64, f64) = (1e-5, 1.0 - 1e-5);

/// Precomputed cosine schedule over `t = 0..=T`.
///
/// `alpha[t] = alpha_bar[t] / alpha_bar[t-1]` and `beta[t] = 1 - alpha[t]`,
/// stored at index `t - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    total_steps: usize,
    offset: f64,
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

fn cosine_f(t: usize, total: usize, s: f64) -> f64 {
    let x = ((t as f64 / total as f64 + s) / (1.0 + s)) * FRAC_PI_2;
    x.cos().powi(2)
}

/// `alpha_bar[t] = f(t) / f(0)` with `f(t) = cos(((t/T + s) / (1 + s)) * pi/2)^2`.
pub fn build_cosine_schedule(total_steps: usize, s: f64) -> Result<NoiseSchedule> {
    if total_steps < 1 {
        return Err(Error::InvalidArgument("total_steps must be >= 1".into()));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("offset s must be > 0, got {s}")));
    }
    let f0 = cosine_f(0, total_steps, s);
    let mut alpha_bar: Vec<f64> = (0..=total_steps)
        .map(|t| (cosine_f(t, total_steps, s) / f0).max(0.0))
        .collect();
    alpha_bar[0] = 1.0;
    let alpha: Vec<f64> = (1..=total_steps)
        .map(|t| alpha_bar[t] / alpha_bar[t - 1])
        .collect();
    let beta = alpha.iter().map(|a| 1.0 - a).collect();
    Ok(NoiseSchedule {
        total_steps,
        offset: s,
        alpha_bar,
        alpha,
        beta,
    })
}

impl NoiseSchedule {
    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `alpha_bar[t]` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `alpha[t]` for `t` in `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `beta[t]` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `ln(alpha_bar / (1 - alpha_bar))` with `alpha_bar` clamped to [`LOGSNR_CLAMP`].
    pub fn log_snr(&self, t: usize) -> f64 {
        let ab = self.alpha_bar[t].clamp(LOGSNR_CLAMP.0, LOGSNR_CLAMP.1);
        (ab / (1.0 - ab)).ln()
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 0..={}",
                self.total_steps
            )));
        }
        Ok(())
    }
}

/// Descending timesteps in `[1, T]`, one per function evaluation, ending at 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepPlan {
    steps: Vec<usize>,
}

impl TimestepPlan {
    /// Validates strict descent and the final step.
    pub fn new(steps: Vec<usize>) -> Result<Self> {
        if steps.is_empty() || *steps.last().unwrap() != 1 || steps.contains(&0) {
            return Err(Error::InvalidArgument(
                "timestep plan must be nonempty, positive and end at 1".into(),
            ));
        }
        if steps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidArgument(
                "timestep plan must be strictly descending".into(),
            ));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(t_from, t_to)` pairs, the last one ending at 0.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(move |(i, &t)| (t, self.steps.get(i + 1).copied().unwrap_or(0)))
    }
}

/// Picks `nfe` timesteps whose log-SNR values sit closest to a uniform grid
/// between `lambda(T)` and `lambda(1)`.
///
/// Ties go to the larger timestep. Collisions are resolved by pushing each
/// step below its predecessor while leaving room for the remaining ones, so
/// the plan always has exactly `nfe` entries; the last entry is forced to 1.
pub fn logsnr_timesteps(schedule: &NoiseSchedule, nfe: usize) -> Result<TimestepPlan> {
    let total = schedule.total_steps();
    if nfe < 1 || nfe > total {
        return Err(Error::InvalidArgument(format!(
            "nfe must be in 1..={total}, got {nfe}"
        )));
    }
    if nfe == 1 {
        return TimestepPlan::new(vec![1]);
    }
    let lambdas: Vec<f64> = (0..=total).map(|t| schedule.log_snr(t)).collect();
    let (lo, hi) = (lambdas[total], lambdas[1]);
    let mut steps = Vec::with_capacity(nfe);
    for k in 0..nfe {
        let target = lo + (hi - lo) * k as f64 / (nfe - 1) as f64;
        let mut best = total;
        let mut best_dist = f64::INFINITY;
        for t in (1..=total).rev() {
            let d = (lambdas[t] - target).abs();
            if d < best_dist {
                best = t;
                best_dist = d;
            }
        }
        let upper = steps.last().map_or(total, |&prev: &usize| prev - 1);
        let lower = nfe - k;
        steps.push(best.clamp(lower, upper));
    }
    *steps.last_mut().unwrap() = 1;
    TimestepPlan::new(steps)
}
