//! Forward noising and reverse denoising on twist-valued diffusion states.
//!
//! Reverse steps are written for an arbitrary pair `t_from > t_to`, reading
//! `alpha_bar` at both ends, so a plan that skips timesteps is handled by
//! treating consecutive plan entries as adjacent. With `t_to = t_from - 1`
//! the coefficients reduce to the single-step posterior.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Twist;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseStepMode {
    /// Deterministic posterior mean.
    #[default]
    PosteriorMean,
    /// Posterior mean plus `sqrt(variance) * eta`, `eta ~ N(0, I)`.
    PosteriorStochastic,
    /// First-order deterministic ODE step (DDIM with zero eta).
    OdeFirstOrder,
}

impl ReverseStepMode {
    pub fn label(&self) -> &'static str {
        match self {
            ReverseStepMode::PosteriorMean => "posterior_mean",
            ReverseStepMode::PosteriorStochastic => "posterior_stochastic",
            ReverseStepMode::OdeFirstOrder => "ode_first_order",
        }
    }
}

/// Coefficients of `q(x_to | x_from, x0)`: `mean = x_coef * x_from + x0_coef * x0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posterior {
    pub x_coef: f64,
    pub x0_coef: f64,
    pub variance: f64,
}

pub fn posterior(t_from: usize, t_to: usize, schedule: &NoiseSchedule) -> Result<Posterior> {
    schedule.check_step(t_from)?;
    if t_to >= t_from {
        return Err(Error::InvalidArgument(format!(
            "reverse step needs t_from > t_to, got {t_from} -> {t_to}"
        )));
    }
    let ab_from = schedule.alpha_bar(t_from);
    let ab_to = schedule.alpha_bar(t_to);
    let alpha = if t_to + 1 == t_from {
        schedule.alpha(t_from)
    } else {
        ab_from / ab_to
    };
    let denom = 1.0 - ab_from;
    Ok(Posterior {
        x_coef: alpha.sqrt() * (1.0 - ab_to) / denom,
        x0_coef: ab_to.sqrt() * (1.0 - alpha) / denom,
        variance: (1.0 - alpha) * (1.0 - ab_to) / denom,
    })
}

/// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`
pub fn forward_sample(x0: &Twist, eps: &Twist, t: usize, schedule: &NoiseSchedule) -> Result<Twist> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    Ok(*x0 * ab.sqrt() + *eps * (1.0 - ab).sqrt())
}

/// Single-step posterior mean for `t -> t - 1`.
pub fn posterior_mean(xt: &Twist, x0_hat: &Twist, t: usize, schedule: &NoiseSchedule) -> Result<Twist> {
    if t == 0 {
        return Err(Error::InvalidArgument("posterior mean undefined at t = 0".into()));
    }
    let p = posterior(t, t - 1, schedule)?;
    Ok(*xt * p.x_coef + *x0_hat * p.x0_coef)
}

/// Single-step posterior variance for `t -> t - 1`.
pub fn posterior_sigma(t: usize, schedule: &NoiseSchedule) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidArgument("posterior variance undefined at t = 0".into()));
    }
    Ok(posterior(t, t - 1, schedule)?.variance)
}

fn standard_normal_twist<R: Rng + ?Sized>(rng: &mut R) -> Twist {
    let mut v = [0.0; 6];
    for c in v.iter_mut() {
        *c = rng.sample(StandardNormal);
    }
    Twist::from_array(v)
}

/// One reverse transition `x_{t_from} -> x_{t_to}` given the clean estimate.
///
/// `rng` is only drawn from in [`ReverseStepMode::PosteriorStochastic`] and
/// only when the transition variance is positive.
pub fn reverse_step<R: Rng + ?Sized>(
    xt: &Twist,
    x0_hat: &Twist,
    t_from: usize,
    t_to: usize,
    mode: ReverseStepMode,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Twist> {
    let p = posterior(t_from, t_to, schedule)?;
    let out = match mode {
        ReverseStepMode::PosteriorMean => *xt * p.x_coef + *x0_hat * p.x0_coef,
        ReverseStepMode::PosteriorStochastic => {
            let mean = *xt * p.x_coef + *x0_hat * p.x0_coef;
            if p.variance > 0.0 {
                mean + standard_normal_twist(rng) * p.variance.sqrt()
            } else {
                mean
            }
        }
        ReverseStepMode::OdeFirstOrder => {
            let ab_from = schedule.alpha_bar(t_from);
            let ab_to = schedule.alpha_bar(t_to);
            let eps_hat = (*xt - *x0_hat * ab_from.sqrt()) * (1.0 / (1.0 - ab_from).sqrt());
            *x0_hat * ab_to.sqrt() + eps_hat * (1.0 - ab_to).sqrt()
        }
    };
    Ok(out)
}
