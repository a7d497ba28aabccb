//! Calibration strategies built on one surrogate: Single, NaIter, LSD and NLSD.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{exp_map, log_map, RigidTransform, Twist};
use crate::sampler::{posterior, reverse_step, ReverseStepMode};
use crate::schedule::{logsnr_timesteps, NoiseSchedule, TimestepPlan};
use crate::surrogate::Denoiser;

pub const DEFAULT_NFE: usize = 10;
/// Default NLSD noise scale, on the order of the per-axis spread of a
/// ±15°/±15 cm initial error (0.15 rad and 0.087 m standard deviation).
pub const DEFAULT_NLSD_SIGMA: f64 = 0.1;

fn default_nlsd_sigma() -> f64 {
    DEFAULT_NLSD_SIGMA
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Single,
    NaIter,
    Lsd,
    Nlsd,
}

impl MethodKind {
    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Single => "Single",
            MethodKind::NaIter => "NaIter",
            MethodKind::Lsd => "LSD",
            MethodKind::Nlsd => "NLSD",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub kind: MethodKind,
    /// Overrides the benchmark-wide NFE. Ignored by Single.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nfe: Option<usize>,
    /// Reverse-step rule for LSD.
    #[serde(default)]
    pub mode: ReverseStepMode,
    /// Scale of the SE(3) noise injected by NLSD reverse steps.
    #[serde(default = "default_nlsd_sigma")]
    pub nlsd_perturb_sigma: f64,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            nfe: None,
            mode: ReverseStepMode::default(),
            nlsd_perturb_sigma: DEFAULT_NLSD_SIGMA,
        }
    }

    pub fn single() -> Self {
        Self::new(MethodKind::Single)
    }

    pub fn naiter() -> Self {
        Self::new(MethodKind::NaIter)
    }

    pub fn lsd(mode: ReverseStepMode) -> Self {
        Self {
            mode,
            ..Self::new(MethodKind::Lsd)
        }
    }

    pub fn nlsd(sigma: f64) -> Self {
        Self {
            nlsd_perturb_sigma: sigma,
            ..Self::new(MethodKind::Nlsd)
        }
    }

    pub fn with_nfe(mut self, nfe: usize) -> Self {
        self.nfe = Some(nfe);
        self
    }

    /// Number of function evaluations this method will perform.
    pub fn resolved_nfe(&self, default: usize) -> usize {
        match self.kind {
            MethodKind::Single => 1,
            _ => self.nfe.unwrap_or(default),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nfe == Some(0) {
            return Err(Error::InvalidArgument(format!("{}: nfe must be >= 1", self.kind)));
        }
        if !(self.nlsd_perturb_sigma >= 0.0 && self.nlsd_perturb_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{}: nlsd_perturb_sigma must be >= 0",
                self.kind
            )));
        }
        Ok(())
    }

    /// Report label: the method name, plus any non-default parameters.
    pub fn label(&self) -> String {
        let mut extra = Vec::new();
        if self.kind != MethodKind::Single {
            if let Some(n) = self.nfe {
                extra.push(format!("nfe={n}"));
            }
        }
        if self.kind == MethodKind::Lsd && self.mode != ReverseStepMode::default() {
            extra.push(self.mode.label().to_string());
        }
        if self.kind == MethodKind::Nlsd && self.nlsd_perturb_sigma != DEFAULT_NLSD_SIGMA {
            extra.push(format!("sigma={}", self.nlsd_perturb_sigma));
        }
        if extra.is_empty() {
            self.kind.name().to_string()
        } else {
            format!("{}[{}]", self.kind.name(), extra.join(" "))
        }
    }
}

/// Estimates produced by one method run, one per function evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub estimates: Vec<RigidTransform>,
    pub final_estimate: RigidTransform,
    /// 1-based evaluation at which a log-map singularity stopped the run.
    /// Remaining entries repeat the last good estimate.
    pub aborted_at: Option<usize>,
}

impl Trajectory {
    fn complete(estimates: Vec<RigidTransform>, final_estimate: RigidTransform) -> Self {
        Self {
            estimates,
            final_estimate,
            aborted_at: None,
        }
    }

    fn aborted(mut estimates: Vec<RigidTransform>, t0: &RigidTransform, nfe: usize) -> Self {
        let at = estimates.len() + 1;
        let last = estimates.last().copied().unwrap_or(*t0);
        estimates.resize(nfe, last);
        Self {
            estimates,
            final_estimate: last,
            aborted_at: Some(at),
        }
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn is_flagged(&self) -> bool {
        self.aborted_at.is_some()
    }
}

fn single_steps<R: Rng + ?Sized>(
    den: &mut Denoiser<'_>,
    t0: &RigidTransform,
    out: &mut Vec<RigidTransform>,
    rng: &mut R,
) -> Result<RigidTransform> {
    let c = den.denoise(t0, rng)?;
    let est = exp_map(&c.twist)?.compose(t0);
    out.push(est);
    Ok(est)
}

fn naiter_steps<R: Rng + ?Sized>(
    den: &mut Denoiser<'_>,
    t0: &RigidTransform,
    nfe: usize,
    out: &mut Vec<RigidTransform>,
    rng: &mut R,
) -> Result<RigidTransform> {
    let mut current = *t0;
    for _ in 0..nfe {
        let c = den.denoise(&current, rng)?;
        current = exp_map(&c.twist)?.compose(&current);
        out.push(current);
    }
    Ok(current)
}

fn lsd_steps<R: Rng + ?Sized>(
    den: &mut Denoiser<'_>,
    t0: &RigidTransform,
    plan: &TimestepPlan,
    mode: ReverseStepMode,
    schedule: &NoiseSchedule,
    out: &mut Vec<RigidTransform>,
    rng: &mut R,
) -> Result<RigidTransform> {
    let mut x = Twist::zero();
    for (t, s) in plan.transitions() {
        let x0_hat = den.surrogate_x0(&x, t0, rng)?;
        out.push(exp_map(&x0_hat)?.compose(t0));
        x = reverse_step(&x, &x0_hat, t, s, mode, schedule, rng)?;
    }
    Ok(exp_map(&x)?.compose(t0))
}

fn se3_noise<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Twist {
    let mut v = [0.0; 6];
    for c in v.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *c = scale * z;
    }
    Twist::from_array(v)
}

fn nlsd_steps<R: Rng + ?Sized>(
    den: &mut Denoiser<'_>,
    t0: &RigidTransform,
    plan: &TimestepPlan,
    sigma: f64,
    schedule: &NoiseSchedule,
    out: &mut Vec<RigidTransform>,
    rng: &mut R,
) -> Result<RigidTransform> {
    let t0_inv = t0.inverse();
    let log_t0 = log_map(t0)?;
    let mut h = *t0;
    for (t, s) in plan.transitions() {
        let xi_t = log_map(&h.compose(&t0_inv))?;
        let xi0_hat = den.surrogate_x0(&xi_t, t0, rng)?;
        let h0_hat = exp_map(&xi0_hat)?.compose(t0);
        out.push(h0_hat);
        if s == 0 {
            return Ok(h0_hat);
        }
        // Both states are taken to the Lie algebra about the identity, mixed
        // with the posterior weights, and mapped back.
        let p = posterior(t, s, schedule)?;
        let mixed = log_map(&h)? * p.x_coef + log_map(&h0_hat)? * p.x0_coef + log_t0 * (1.0 - p.x_coef - p.x0_coef);
        h = exp_map(&mixed)?;
        if sigma > 0.0 && p.variance > 0.0 {
            h = exp_map(&se3_noise(rng, sigma * p.variance.sqrt()))?.compose(&h);
        }
    }
    Ok(h)
}

pub fn run_single<R: Rng + ?Sized>(den: &mut Denoiser<'_>, t0: &RigidTransform, rng: &mut R) -> Result<Trajectory> {
    let mut out = Vec::with_capacity(1);
    let fin = single_steps(den, t0, &mut out, rng)?;
    Ok(Trajectory::complete(out, fin))
}

pub fn run_naiter<R: Rng + ?Sized>(
    den: &mut Denoiser<'_>,
    t0: &RigidTransform,
    nfe: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if nfe == 0 {
        return Err(Error::InvalidArgument("nfe must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(nfe);
    let fin = naiter_steps(den, t0, nfe, &mut out, rng)?;
    Ok(Trajectory::complete(out, fin))
}

pub fn run_lsd<R: Rng + ?Sized>(
    den: &mut Denoiser<'_>,
    t0: &RigidTransform,
    plan: &TimestepPlan,
    mode: ReverseStepMode,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut out = Vec::with_capacity(plan.len());
    let fin = lsd_steps(den, t0, plan, mode, schedule, &mut out, rng)?;
    Ok(Trajectory::complete(out, fin))
}

pub fn run_nlsd<R: Rng + ?Sized>(
    den: &mut Denoiser<'_>,
    t0: &RigidTransform,
    plan: &TimestepPlan,
    sigma: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut out = Vec::with_capacity(plan.len());
    let fin = nlsd_steps(den, t0, plan, sigma, schedule, &mut out, rng)?;
    Ok(Trajectory::complete(out, fin))
}

/// Runs `spec` from `t0`. A log-map singularity does not fail the call: the
/// trajectory comes back flagged with the estimates reached so far.
pub fn run_method<R: Rng + ?Sized>(
    spec: &MethodSpec,
    den: &mut Denoiser<'_>,
    t0: &RigidTransform,
    default_nfe: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Trajectory> {
    spec.validate()?;
    den.prepare()?;
    let nfe = spec.resolved_nfe(default_nfe);
    let mut out = Vec::with_capacity(nfe);
    let result = match spec.kind {
        MethodKind::Single => single_steps(den, t0, &mut out, rng),
        MethodKind::NaIter => naiter_steps(den, t0, nfe, &mut out, rng),
        MethodKind::Lsd => {
            let plan = logsnr_timesteps(schedule, nfe)?;
            lsd_steps(den, t0, &plan, spec.mode, schedule, &mut out, rng)
        }
        MethodKind::Nlsd => {
            let plan = logsnr_timesteps(schedule, nfe)?;
            nlsd_steps(den, t0, &plan, spec.nlsd_perturb_sigma, schedule, &mut out, rng)
        }
    };
    match result {
        Ok(fin) => Ok(Trajectory::complete(out, fin)),
        Err(Error::LogSingularity { .. }) => Ok(Trajectory::aborted(out, t0, nfe)),
        Err(e) => Err(e),
    }
}

/// Forward corruption used by NLSD: interpolate `h0` toward `t0` in the Lie
/// algebra about the identity, then apply left SE(3) noise.
pub fn nlsd_forward(
    h0: &RigidTransform,
    t0: &RigidTransform,
    t: usize,
    sigma: f64,
    eta: &Twist,
    schedule: &NoiseSchedule,
) -> Result<RigidTransform> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let interp = log_map(h0)? * ab.sqrt() + log_map(t0)? * (1.0 - ab.sqrt());
    Ok(exp_map(&(*eta * ((1.0 - ab).sqrt() * sigma)))?.compose(&exp_map(&interp)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::EulerAngles;
    use crate::scene::{generate_scene, sample_perturbation, PerturbationSpec, Scene, SceneConfig};
    use crate::schedule::build_cosine_schedule;
    use crate::surrogate::{Buffering, SurrogateSpec};
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        build_cosine_schedule(1000, 0.008).unwrap()
    }

    fn scene(seed: u64) -> Scene {
        generate_scene(&SceneConfig::default(), seed, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn all_methods() -> Vec<MethodSpec> {
        vec![
            MethodSpec::single(),
            MethodSpec::naiter(),
            MethodSpec::lsd(ReverseStepMode::PosteriorMean),
            MethodSpec::lsd(ReverseStepMode::OdeFirstOrder),
            MethodSpec::nlsd(0.0),
        ]
    }

    fn run(spec: &MethodSpec, s: &Scene, sur: &SurrogateSpec, t0: &RigidTransform, seed: u64) -> Trajectory {
        let mut den = Denoiser::new(s, sur, Buffering::Enabled);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tr = run_method(spec, &mut den, t0, 10, &sched(), &mut rng).unwrap();
        assert_eq!(den.prepare_calls(), 1);
        tr
    }

    fn translated(s: &Scene, d: [f64; 3]) -> RigidTransform {
        exp_map(&Twist::translation(d[0], d[1], d[2])).unwrap().compose(&s.gt_extrinsic)
    }

    fn gap(a: &RigidTransform, b: &RigidTransform) -> f64 {
        log_map(&a.compose(&b.inverse())).unwrap().norm_inf()
    }

    #[test]
    fn zero_surrogate_leaves_t0() {
        let s = scene(1);
        let zero = SurrogateSpec::contraction(0.0, 0.0);
        let xi = sample_perturbation(&PerturbationSpec::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let t0 = exp_map(&xi).unwrap().compose(&s.gt_extrinsic);
        for m in all_methods() {
            let tr = run(&m, &s, &zero, &t0, 0);
            assert!(gap(&tr.final_estimate, &t0) < 1e-12, "{}", m.label());
            assert!(tr.estimates.iter().all(|e| gap(e, &t0) < 1e-12));
        }
    }

    #[test]
    fn oracle_recovers_ground_truth() {
        let oracle = SurrogateSpec::oracle();
        for seed in 0..5 {
            let s = scene(seed);
            let xi = sample_perturbation(&PerturbationSpec::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let t0 = exp_map(&xi).unwrap().compose(&s.gt_extrinsic);
            for m in all_methods() {
                let tr = run(&m, &s, &oracle, &t0, seed);
                assert!(gap(&tr.final_estimate, &s.gt_extrinsic) < 1e-9, "{}", m.label());
                assert_eq!(tr.len(), m.resolved_nfe(10));
            }
        }
    }

    #[test]
    fn single_contraction_halves_translation() {
        let s = scene(2);
        let t0 = translated(&s, [0.0, 0.0, 0.1]);
        let tr = run(&MethodSpec::single(), &s, &SurrogateSpec::contraction(0.5, 0.0), &t0, 0);
        let residual = tr.final_estimate.translation - s.gt_extrinsic.translation;
        assert!((residual - Vector3::new(0.0, 0.0, 0.05)).amax() < 1e-12);
        assert_eq!(tr.len(), 1);
    }

    #[test]
    fn naiter_contraction_decays_geometrically() {
        let s = scene(3);
        let t0 = translated(&s, [0.0, 0.0, 0.1]);
        let tr = run(&MethodSpec::naiter(), &s, &SurrogateSpec::contraction(0.5, 0.0), &t0, 0);
        for (k, e) in tr.estimates.iter().enumerate() {
            let dz = (e.translation - s.gt_extrinsic.translation).z;
            assert!((dz - 0.1 * 0.5f64.powi(k as i32 + 1)).abs() < 1e-11, "step {}", k + 1);
        }
    }

    #[test]
    fn naiter_oracle_is_fixed_after_first_step() {
        let s = scene(4);
        let t0 = exp_map(&Twist::from_array([0.1, -0.05, 0.02, 0.2, 0.1, -0.15]))
            .unwrap()
            .compose(&s.gt_extrinsic);
        let tr = run(&MethodSpec::naiter(), &s, &SurrogateSpec::oracle(), &t0, 0);
        for e in &tr.estimates {
            assert!(gap(e, &s.gt_extrinsic) < 1e-10);
        }
    }

    #[test]
    fn lsd_single_evaluation_collapses_to_single() {
        let s = scene(5);
        let t0 = exp_map(&Twist::from_array([0.1, -0.05, 0.02, 0.2, 0.1, -0.15]))
            .unwrap()
            .compose(&s.gt_extrinsic);
        let sur = SurrogateSpec::range_dependent(0.9, 2.0, 0.0);
        let single = run(&MethodSpec::single(), &s, &sur, &t0, 0);
        for mode in [ReverseStepMode::PosteriorMean, ReverseStepMode::OdeFirstOrder] {
            let lsd = run(&MethodSpec::lsd(mode).with_nfe(1), &s, &sur, &t0, 0);
            assert!(gap(&lsd.final_estimate, &single.final_estimate) < 1e-12);
        }
    }

    #[test]
    fn nlsd_matches_lsd_when_transforms_commute() {
        let s = scene(6);
        let t0 = translated(&s, [0.04, -0.12, 0.09]);
        for sur in [
            SurrogateSpec::contraction(0.5, 0.0),
            SurrogateSpec::range_dependent(0.9, 2.0, 0.0),
        ] {
            let lsd = run(&MethodSpec::lsd(ReverseStepMode::PosteriorMean), &s, &sur, &t0, 0);
            let nlsd = run(&MethodSpec::nlsd(0.0), &s, &sur, &t0, 0);
            for (a, b) in lsd.estimates.iter().zip(&nlsd.estimates) {
                assert!(gap(a, b) < 1e-9);
            }
        }
    }

    #[test]
    fn nlsd_differs_from_lsd_with_rotation() {
        let s = scene(7);
        let t0 = exp_map(&Twist::from_array([0.1, -0.05, 0.02, 0.2, 0.1, -0.15]))
            .unwrap()
            .compose(&s.gt_extrinsic);
        let sur = SurrogateSpec::contraction(0.5, 0.0);
        let lsd = run(&MethodSpec::lsd(ReverseStepMode::PosteriorMean), &s, &sur, &t0, 0);
        let nlsd = run(&MethodSpec::nlsd(0.0), &s, &sur, &t0, 0);
        assert!(gap(&lsd.final_estimate, &nlsd.final_estimate) > 1e-6);
    }

    #[test]
    fn runs_are_deterministic() {
        let s = scene(8);
        let t0 = exp_map(&Twist::from_array([0.1, -0.05, 0.02, 0.2, 0.1, -0.15]))
            .unwrap()
            .compose(&s.gt_extrinsic);
        let sur = SurrogateSpec::range_dependent(0.9, 2.0, 0.01);
        let mut specs = all_methods();
        specs.push(MethodSpec::lsd(ReverseStepMode::PosteriorStochastic));
        specs.push(MethodSpec::nlsd(0.5));
        for m in specs {
            let a = run(&m, &s, &sur, &t0, 11);
            let b = run(&m, &s, &sur, &t0, 11);
            assert_eq!(a, b, "{}", m.label());
        }
    }

    #[test]
    fn nlsd_aborts_at_rotation_singularity() {
        let cfg = SceneConfig {
            gt_extrinsic: (&RigidTransform::from_euler(EulerAngles::new(180.0, 0.0, 0.0), Vector3::zeros())).into(),
            ..SceneConfig::default()
        };
        let s = generate_scene(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let t0 = s.gt_extrinsic;
        let tr = run(&MethodSpec::nlsd(0.0), &s, &SurrogateSpec::oracle(), &t0, 0);
        assert_eq!(tr.aborted_at, Some(1));
        assert_eq!(tr.len(), 10);
        let lsd = run(&MethodSpec::lsd(ReverseStepMode::PosteriorMean), &s, &SurrogateSpec::oracle(), &t0, 0);
        assert!(!lsd.is_flagged());
    }

    #[test]
    fn nlsd_forward_endpoints() {
        let s = scene(9);
        let sch = sched();
        let t0 = exp_map(&Twist::from_array([0.1, -0.05, 0.02, 0.2, 0.1, -0.15]))
            .unwrap()
            .compose(&s.gt_extrinsic);
        let eta = Twist::from_array([0.3, -0.2, 0.1, 0.05, 0.4, -0.1]);
        let h = nlsd_forward(&s.gt_extrinsic, &t0, 0, 1.0, &eta, &sch).unwrap();
        assert!(gap(&h, &s.gt_extrinsic) < 1e-12);
        let h = nlsd_forward(&s.gt_extrinsic, &t0, 1000, 0.0, &eta, &sch).unwrap();
        assert!(gap(&h, &t0) < 1e-4);
    }

    #[test]
    fn labels_and_validation() {
        assert_eq!(MethodSpec::lsd(ReverseStepMode::PosteriorMean).label(), "LSD");
        assert_eq!(MethodSpec::lsd(ReverseStepMode::OdeFirstOrder).label(), "LSD[ode_first_order]");
        assert_eq!(MethodSpec::nlsd(0.5).with_nfe(5).label(), "NLSD[nfe=5 sigma=0.5]");
        assert_eq!(MethodSpec::nlsd(DEFAULT_NLSD_SIGMA).label(), "NLSD");
        assert_eq!(MethodSpec::nlsd(0.0).label(), "NLSD[sigma=0]");
        assert_eq!(MethodSpec::single().with_nfe(7).resolved_nfe(10), 1);
        assert!(MethodSpec::naiter().with_nfe(0).validate().is_err());
        assert!(MethodSpec::nlsd(-1.0).validate().is_err());
        let m: MethodSpec = toml::from_str("kind = \"lsd\"\nmode = \"ode_first_order\"\n").unwrap();
        assert_eq!(m, MethodSpec::lsd(ReverseStepMode::OdeFirstOrder));
    }
}
