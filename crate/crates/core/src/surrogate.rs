//! Surrogate denoisers.
//!
//! A base calibrator `D` maps the current extrinsic to a left correction
//! twist. The surrogate built on top of it turns a diffusion state `x_t` into
//! a clean estimate
//!
//! ```text
//! x0_hat = log( exp(D(exp(x_t) * T0)) * exp(x_t) )
//! ```
//!
//! and never sees the timestep. Everything that does not depend on the
//! extrinsic lives in a [`SurrogateContext`] built once by [`prepare`];
//! [`Denoiser`] decides whether that context is reused across evaluations.

use std::sync::Arc;

use nalgebra::{Cholesky, Matrix2x3, Matrix2x6, Matrix3, Matrix3x4, Matrix6, SMatrix, SymmetricEigen, Vector2, Vector3, Vector4, Vector6};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{exp_map, hat, log_map, RigidTransform, Twist};
use crate::sampler::forward_sample;
use crate::scene::{CameraIntrinsics, Scene, NEAR_PLANE};
use crate::schedule::NoiseSchedule;

/// Reprojection error (pixels) below which a correspondence counts as a DLT inlier.
pub const RANSAC_THRESHOLD_PX: f64 = 8.0;
/// Fixed hypothesis budget of the outlier screen.
pub const RANSAC_ITERATIONS: usize = 256;
const DLT_MIN_POINTS: usize = 6;
const MAX_DAMPING_ATTEMPTS: usize = 12;
const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurrogateKind {
    /// Returns the exact correction.
    Oracle,
    /// `lambda * true_correction + N(0, sigma^2)` per component.
    Contraction { lambda: f64, sigma: f64 },
    /// Gain `lambda0 * exp(-k |d|)` and noise `sigma0 * (1 + |d|)` where `d`
    /// is the true correction: accurate near the answer, weak far from it.
    RangeDependent { lambda0: f64, k: f64, sigma0: f64 },
    /// Huber-robust Gauss-Newton on pixel reprojection residuals.
    Reprojection { max_gn_iters: usize, huber_delta: f64 },
}

impl SurrogateKind {
    pub fn default_reprojection() -> Self {
        SurrogateKind::Reprojection {
            max_gn_iters: 3,
            huber_delta: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    #[serde(flatten)]
    pub kind: SurrogateKind,
    #[serde(default)]
    pub seed: u64,
}

impl SurrogateSpec {
    pub fn new(kind: SurrogateKind) -> Self {
        Self { kind, seed: 0 }
    }

    pub fn oracle() -> Self {
        Self::new(SurrogateKind::Oracle)
    }

    pub fn contraction(lambda: f64, sigma: f64) -> Self {
        Self::new(SurrogateKind::Contraction { lambda, sigma })
    }

    pub fn range_dependent(lambda0: f64, k: f64, sigma0: f64) -> Self {
        Self::new(SurrogateKind::RangeDependent { lambda0, k, sigma0 })
    }

    pub fn reprojection(max_gn_iters: usize, huber_delta: f64) -> Self {
        Self::new(SurrogateKind::Reprojection {
            max_gn_iters,
            huber_delta,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("{}: {msg}", self.label())));
        match self.kind {
            SurrogateKind::Oracle => Ok(()),
            SurrogateKind::Contraction { lambda, sigma } => {
                if !(0.0..=1.0).contains(&lambda) || !(sigma >= 0.0 && sigma.is_finite()) {
                    return bad("need 0 <= lambda <= 1 and sigma >= 0");
                }
                Ok(())
            }
            SurrogateKind::RangeDependent { lambda0, k, sigma0 } => {
                if !(0.0..=1.0).contains(&lambda0)
                    || !(k >= 0.0 && k.is_finite())
                    || !(sigma0 >= 0.0 && sigma0.is_finite())
                {
                    return bad("need 0 <= lambda0 <= 1, k >= 0 and sigma0 >= 0");
                }
                Ok(())
            }
            SurrogateKind::Reprojection {
                max_gn_iters,
                huber_delta,
            } => {
                if !(1..=100).contains(&max_gn_iters) || !(huber_delta > 0.0 && huber_delta.is_finite()) {
                    return bad("need 1 <= max_gn_iters <= 100 and huber_delta > 0");
                }
                Ok(())
            }
        }
    }

    /// Stable, human-readable identifier used in reports and seed derivation.
    pub fn label(&self) -> String {
        match self.kind {
            SurrogateKind::Oracle => "oracle".into(),
            SurrogateKind::Contraction { lambda, sigma } => format!("contraction(lambda={lambda} sigma={sigma})"),
            SurrogateKind::RangeDependent { lambda0, k, sigma0 } => {
                format!("range_dependent(lambda0={lambda0} k={k} sigma0={sigma0})")
            }
            SurrogateKind::Reprojection {
                max_gn_iters,
                huber_delta,
            } => format!("reprojection(iters={max_gn_iters} huber={huber_delta})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Correspondence {
    point: Vector3<f64>,
    pixel: Vector2<f64>,
    inlier: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct ReprojectionTables {
    intrinsics: CameraIntrinsics,
    max_gn_iters: usize,
    huber_delta: f64,
    correspondences: Vec<Correspondence>,
}

#[derive(Clone, Debug, PartialEq)]
enum Cache {
    Reference,
    Reprojection(ReprojectionTables),
}

/// Extrinsic-independent state for one scene and one surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateContext {
    scene_id: u64,
    spec: SurrogateSpec,
    gt: RigidTransform,
    cache: Cache,
}

impl SurrogateContext {
    pub fn scene_id(&self) -> u64 {
        self.scene_id
    }

    pub fn spec(&self) -> &SurrogateSpec {
        &self.spec
    }

    /// Number of correspondence records, if this is a reprojection context.
    pub fn correspondence_count(&self) -> Option<usize> {
        match &self.cache {
            Cache::Reference => None,
            Cache::Reprojection(t) => Some(t.correspondences.len()),
        }
    }

    /// Correspondences rejected by the outlier screen.
    pub fn screened_out(&self) -> Option<usize> {
        match &self.cache {
            Cache::Reference => None,
            Cache::Reprojection(t) => Some(t.correspondences.iter().filter(|c| !c.inlier).count()),
        }
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        if scene.id != self.scene_id || scene.gt_extrinsic != self.gt {
            return Err(Error::ContractViolation(format!(
                "context built for scene {} used with scene {}",
                self.scene_id, scene.id
            )));
        }
        Ok(())
    }
}

/// Builds the per-scene cache. For the reprojection surrogate this screens
/// outliers with a seeded RANSAC over direct linear transform fits.
pub fn prepare(scene: &Scene, spec: &SurrogateSpec) -> Result<SurrogateContext> {
    spec.validate()?;
    let cache = match spec.kind {
        SurrogateKind::Reprojection {
            max_gn_iters,
            huber_delta,
        } => {
            let mut correspondences: Vec<Correspondence> = scene
                .observations
                .iter()
                .map(|o| Correspondence {
                    point: scene.points[o.point_index],
                    pixel: o.pixel,
                    inlier: true,
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ scene.id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mask = screen_outliers(&correspondences, &mut rng);
            for (c, keep) in correspondences.iter_mut().zip(mask) {
                c.inlier = keep;
            }
            Cache::Reprojection(ReprojectionTables {
                intrinsics: scene.intrinsics,
                max_gn_iters,
                huber_delta,
                correspondences,
            })
        }
        _ => Cache::Reference,
    };
    Ok(SurrogateContext {
        scene_id: scene.id,
        spec: spec.clone(),
        gt: scene.gt_extrinsic,
        cache,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenoiseStatus {
    #[default]
    Ok,
    /// Normal equations stayed singular after damping; the correction is zero.
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correction {
    pub twist: Twist,
    pub status: DenoiseStatus,
}

impl Correction {
    fn ok(twist: Twist) -> Self {
        Self {
            twist,
            status: DenoiseStatus::Ok,
        }
    }
}

fn gaussian_twist<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Twist {
    let mut v = [0.0; 6];
    for c in v.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *c = sigma * z;
    }
    Twist::from_array(v)
}

/// Base calibrator: estimate of `log(T_gt * current^-1)`.
pub fn denoise<R: Rng + ?Sized>(ctx: &SurrogateContext, current: &RigidTransform, rng: &mut R) -> Result<Correction> {
    let truth = || log_map(&ctx.gt.compose(&current.inverse()));
    match (&ctx.spec.kind, &ctx.cache) {
        (SurrogateKind::Oracle, _) => Ok(Correction::ok(truth()?)),
        (&SurrogateKind::Contraction { lambda, sigma }, _) => {
            let mut out = truth()? * lambda;
            if sigma > 0.0 {
                out += gaussian_twist(rng, sigma);
            }
            Ok(Correction::ok(out))
        }
        (&SurrogateKind::RangeDependent { lambda0, k, sigma0 }, _) => {
            let d = truth()?;
            let r = d.norm();
            let mut out = d * (lambda0 * (-k * r).exp());
            if sigma0 > 0.0 {
                out += gaussian_twist(rng, sigma0 * (1.0 + r));
            }
            Ok(Correction::ok(out))
        }
        (SurrogateKind::Reprojection { .. }, Cache::Reprojection(tables)) => gauss_newton(tables, current),
        (SurrogateKind::Reprojection { .. }, Cache::Reference) => Err(Error::ContractViolation(
            "reprojection surrogate used without its prepared tables".into(),
        )),
    }
}

/// Clean estimate for diffusion state `x_t` around the initial extrinsic `t0`.
pub fn surrogate_x0<R: Rng + ?Sized>(
    ctx: &SurrogateContext,
    x_t: &Twist,
    t0: &RigidTransform,
    rng: &mut R,
) -> Result<(Twist, DenoiseStatus)> {
    let shift = exp_map(x_t)?;
    let noisy = shift.compose(t0);
    let c = denoise(ctx, &noisy, rng)?;
    let x0_hat = log_map(&exp_map(&c.twist)?.compose(&shift))?;
    Ok((x0_hat, c.status))
}

/// One training pair: `t` drawn uniformly from `1..=T`, `x0 = log(T_gt * T0^-1)`
/// and `x_t` from the forward process with zero noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingSample {
    pub t: usize,
    pub x_t: Twist,
    pub x0: Twist,
}

pub fn training_targets<R: Rng + ?Sized>(
    scene: &Scene,
    t0: &RigidTransform,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<TrainingSample> {
    let x0 = log_map(&scene.gt_extrinsic.compose(&t0.inverse()))?;
    let t = rng.random_range(1..=schedule.total_steps());
    let x_t = forward_sample(&x0, &Twist::zero(), t, schedule)?;
    Ok(TrainingSample { t, x_t, x0 })
}

/// L1 loss between a predicted and a target twist.
pub fn l1_loss(predicted: &Twist, target: &Twist) -> f64 {
    (*predicted - *target).norm_l1()
}

/// Reuse policy for the surrogate context within one method run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Buffering {
    /// Prepare once, on the first evaluation, and reuse it.
    #[default]
    Enabled,
    /// Rebuild the context before every evaluation.
    Disabled,
}

/// Evaluates a surrogate on one scene, counting context preparations.
#[derive(Debug)]
pub struct Denoiser<'a> {
    scene: &'a Scene,
    spec: &'a SurrogateSpec,
    buffering: Buffering,
    cached: Option<Arc<SurrogateContext>>,
    // A freshly prepared context is used once even when buffering is off.
    fresh: bool,
    prepare_calls: usize,
    evaluations: usize,
    singular: usize,
}

impl<'a> Denoiser<'a> {
    pub fn new(scene: &'a Scene, spec: &'a SurrogateSpec, buffering: Buffering) -> Self {
        Self {
            scene,
            spec,
            buffering,
            cached: None,
            fresh: false,
            prepare_calls: 0,
            evaluations: 0,
            singular: 0,
        }
    }

    /// Uses an already prepared context; it must belong to `scene`.
    pub fn with_context(scene: &'a Scene, spec: &'a SurrogateSpec, ctx: Arc<SurrogateContext>) -> Result<Self> {
        ctx.check_scene(scene)?;
        if ctx.spec != *spec {
            return Err(Error::ContractViolation("context was prepared for a different surrogate".into()));
        }
        let mut d = Self::new(scene, spec, Buffering::Enabled);
        d.cached = Some(ctx);
        Ok(d)
    }

    pub fn scene(&self) -> &Scene {
        self.scene
    }

    pub fn prepare_calls(&self) -> usize {
        self.prepare_calls
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Evaluations whose normal equations were singular.
    pub fn singular_evaluations(&self) -> usize {
        self.singular
    }

    /// Builds the context now unless one is already held.
    pub fn prepare(&mut self) -> Result<()> {
        if self.cached.is_none() {
            self.rebuild()?;
        }
        Ok(())
    }

    fn rebuild(&mut self) -> Result<()> {
        self.cached = Some(Arc::new(prepare(self.scene, self.spec)?));
        self.prepare_calls += 1;
        self.fresh = true;
        Ok(())
    }

    fn context(&mut self) -> Result<Arc<SurrogateContext>> {
        let reuse = self.cached.is_some() && (self.buffering == Buffering::Enabled || self.fresh);
        if !reuse {
            self.rebuild()?;
        }
        self.fresh = false;
        Ok(Arc::clone(self.cached.as_ref().expect("context prepared")))
    }

    fn track(&mut self, status: DenoiseStatus) {
        self.evaluations += 1;
        if status == DenoiseStatus::Singular {
            self.singular += 1;
        }
    }

    pub fn denoise<R: Rng + ?Sized>(&mut self, current: &RigidTransform, rng: &mut R) -> Result<Correction> {
        let ctx = self.context()?;
        let c = denoise(&ctx, current, rng)?;
        self.track(c.status);
        Ok(c)
    }

    pub fn surrogate_x0<R: Rng + ?Sized>(&mut self, x_t: &Twist, t0: &RigidTransform, rng: &mut R) -> Result<Twist> {
        let ctx = self.context()?;
        let (x0, status) = surrogate_x0(&ctx, x_t, t0, rng)?;
        self.track(status);
        Ok(x0)
    }
}

fn huber_weight(residual_norm: f64, delta: f64) -> f64 {
    if residual_norm <= delta {
        1.0
    } else {
        delta / residual_norm
    }
}

// Solves (H + mu * max_diag(H) * I) dx = -g, growing mu tenfold until the
// system is positive definite and reasonably conditioned.
fn solve_damped(h: &Matrix6<f64>, g: &Vector6<f64>) -> Option<Vector6<f64>> {
    let diag = Matrix6::identity() * h.diagonal().max();
    let mut mu = 0.0;
    for _ in 0..MAX_DAMPING_ATTEMPTS {
        let a = h + diag * mu;
        if let Some(ch) = Cholesky::new(a) {
            let l = ch.l_dirty().diagonal();
            let (lo, hi) = l.iter().fold((f64::MAX, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
            if lo > 0.0 && (hi / lo).powi(2) < MAX_CONDITION {
                let dx = ch.solve(&(-g));
                if dx.iter().all(|v| v.is_finite()) {
                    return Some(dx);
                }
            }
        }
        mu = if mu == 0.0 { 1e-6 } else { mu * 10.0 };
    }
    None
}

fn gauss_newton(tables: &ReprojectionTables, current: &RigidTransform) -> Result<Correction> {
    let k = &tables.intrinsics;
    let mut correction = RigidTransform::identity();
    for _ in 0..tables.max_gn_iters {
        let pose = correction.compose(current);
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        let mut used = 0usize;
        for c in tables.correspondences.iter().filter(|c| c.inlier) {
            let q = pose.transform_point(&c.point);
            if q.z <= NEAR_PLANE {
                continue;
            }
            let r = k.pixel(&q) - c.pixel;
            let w = huber_weight(r.norm(), tables.huber_delta);
            let iz = 1.0 / q.z;
            let d_pix = Matrix2x3::new(
                k.fx * iz, 0.0, -k.fx * q.x * iz * iz,
                0.0, k.fy * iz, -k.fy * q.y * iz * iz,
            );
            let mut d_pose = Matrix2x6::zeros();
            d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_pix);
            d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(d_pix * -hat(&q)));
            h += d_pose.transpose() * d_pose * w;
            g += d_pose.transpose() * r * w;
            used += 1;
        }
        if used < 3 {
            return Ok(Correction {
                twist: Twist::zero(),
                status: DenoiseStatus::Singular,
            });
        }
        let Some(dx) = solve_damped(&h, &g) else {
            return Ok(Correction {
                twist: Twist::zero(),
                status: DenoiseStatus::Singular,
            });
        };
        let step = Twist::new(dx.fixed_rows::<3>(0).into_owned(), dx.fixed_rows::<3>(3).into_owned());
        correction = exp_map(&step)?.compose(&correction);
    }
    Ok(Correction::ok(log_map(&correction)?))
}

type Normalizer = Matrix3<f64>;

fn normalize_image(pts: &[Vector2<f64>]) -> Normalizer {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_d > 0.0 { 2f64.sqrt() / mean_d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn normalize_space(pts: &[Vector3<f64>]) -> nalgebra::Matrix4<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mean_d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_d > 0.0 { 3f64.sqrt() / mean_d } else { 1.0 };
    let mut m = nalgebra::Matrix4::identity() * s;
    m[(3, 3)] = 1.0;
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-c * s));
    m
}

/// Least-squares camera matrix (pixel units) through the given correspondences.
fn fit_dlt(corr: &[Correspondence]) -> Option<Matrix3x4<f64>> {
    let pix: Vec<Vector2<f64>> = corr.iter().map(|c| c.pixel).collect();
    let pts: Vec<Vector3<f64>> = corr.iter().map(|c| c.point).collect();
    let tn = normalize_image(&pix);
    let un = normalize_space(&pts);
    let mut ata = SMatrix::<f64, 12, 12>::zeros();
    for c in corr {
        let x = tn * c.pixel.push(1.0);
        let p = un * c.point.push(1.0);
        let mut r1 = SMatrix::<f64, 1, 12>::zeros();
        let mut r2 = SMatrix::<f64, 1, 12>::zeros();
        for j in 0..4 {
            r1[4 + j] = -x.z * p[j];
            r1[8 + j] = x.y * p[j];
            r2[j] = x.z * p[j];
            r2[8 + j] = -x.x * p[j];
        }
        ata += r1.transpose() * r1 + r2.transpose() * r2;
    }
    let eig = SymmetricEigen::new(ata);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::MAX), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let v = eig.eigenvectors.column(imin);
    let pn = Matrix3x4::from_row_slice(v.as_slice());
    let p = tn.try_inverse()? * pn * un;
    p.iter().all(|x| x.is_finite()).then_some(p)
}

fn dlt_residual(p: &Matrix3x4<f64>, c: &Correspondence) -> Option<f64> {
    let h = p * Vector4::new(c.point.x, c.point.y, c.point.z, 1.0);
    (h.z > 0.0).then(|| (Vector2::new(h.x / h.z, h.y / h.z) - c.pixel).norm())
}

fn inlier_mask(p: &Matrix3x4<f64>, corr: &[Correspondence]) -> Vec<bool> {
    // The DLT solution is defined up to sign; orient it so most points lie in front.
    let ahead = corr
        .iter()
        .filter(|c| (p * c.point.push(1.0)).z > 0.0)
        .count();
    let p = if 2 * ahead >= corr.len() { *p } else { -p };
    corr.iter()
        .map(|c| dlt_residual(&p, c).is_some_and(|e| e < RANSAC_THRESHOLD_PX))
        .collect()
}

/// Keeps correspondences consistent with the best of a fixed number of
/// minimal DLT hypotheses, refit once on its inliers.
fn screen_outliers<R: Rng + ?Sized>(corr: &[Correspondence], rng: &mut R) -> Vec<bool> {
    let n = corr.len();
    if n < 2 * DLT_MIN_POINTS {
        return vec![true; n];
    }
    let mut best: Option<(usize, Vec<bool>)> = None;
    for _ in 0..RANSAC_ITERATIONS {
        let sample: Vec<Correspondence> = index::sample(rng, n, DLT_MIN_POINTS).into_iter().map(|i| corr[i]).collect();
        let Some(p) = fit_dlt(&sample) else { continue };
        let mask = inlier_mask(&p, corr);
        let count = mask.iter().filter(|&&m| m).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, mask));
        }
    }
    let Some((count, mask)) = best else {
        return vec![true; n];
    };
    if count < 2 * DLT_MIN_POINTS {
        return vec![true; n];
    }
    let inliers: Vec<Correspondence> = corr.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
    match fit_dlt(&inliers) {
        Some(p) => {
            let refined = inlier_mask(&p, corr);
            if refined.iter().filter(|&&m| m).count() >= count {
                refined
            } else {
                mask
            }
        }
        None => mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneConfig};
    use crate::schedule::build_cosine_schedule;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn scene(cfg: SceneConfig, seed: u64) -> Scene {
        generate_scene(&cfg, seed, &mut rng(seed)).unwrap()
    }

    fn default_scene() -> Scene {
        scene(SceneConfig::default(), 1)
    }

    fn perturbed(scene: &Scene, xi: [f64; 6]) -> RigidTransform {
        exp_map(&Twist::from_array(xi)).unwrap().compose(&scene.gt_extrinsic)
    }

    #[test]
    fn oracle_context_holds_reference_only() {
        let s = default_scene();
        let ctx = prepare(&s, &SurrogateSpec::oracle()).unwrap();
        assert_eq!(ctx.correspondence_count(), None);
        assert_eq!(ctx.scene_id(), s.id);
    }

    #[test]
    fn oracle_fixed_point_and_exactness() {
        let s = default_scene();
        let ctx = prepare(&s, &SurrogateSpec::oracle()).unwrap();
        let c = denoise(&ctx, &s.gt_extrinsic, &mut rng(0)).unwrap();
        assert!(c.twist.norm_inf() < 1e-10);
        let xi = Twist::from_array([0.05, -0.1, 0.12, 0.2, -0.15, 0.1]);
        let t0 = exp_map(&xi).unwrap().compose(&s.gt_extrinsic);
        let c = denoise(&ctx, &t0, &mut rng(0)).unwrap();
        assert!((c.twist + xi).norm_inf() < 1e-10);
    }

    #[test]
    fn contraction_translation_only() {
        let s = default_scene();
        let ctx = prepare(&s, &SurrogateSpec::contraction(0.5, 0.0)).unwrap();
        // correction needed is +0.1 m along z
        let current = perturbed(&s, [0.0, 0.0, -0.1, 0.0, 0.0, 0.0]);
        let c = denoise(&ctx, &current, &mut rng(0)).unwrap();
        assert!((c.twist - Twist::translation(0.0, 0.0, 0.05)).norm_inf() < 1e-12);
    }

    #[test]
    fn range_dependent_gain_shrinks_with_distance() {
        let s = default_scene();
        let ctx = prepare(&s, &SurrogateSpec::range_dependent(0.9, 2.0, 0.0)).unwrap();
        let near = perturbed(&s, [0.0, 0.0, -0.01, 0.0, 0.0, 0.0]);
        let far = perturbed(&s, [0.0, 0.0, -0.5, 0.0, 0.0, 0.0]);
        let gain = |t: &RigidTransform, d: f64| denoise(&ctx, t, &mut rng(0)).unwrap().twist.rho.z / d;
        assert!((gain(&near, 0.01) - 0.9 * (-0.02f64).exp()).abs() < 1e-12);
        assert!((gain(&far, 0.5) - 0.9 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn noisy_surrogates_follow_the_caller_stream() {
        let s = default_scene();
        let spec = SurrogateSpec::range_dependent(0.9, 2.0, 0.01);
        let ctx = prepare(&s, &spec).unwrap();
        let t0 = perturbed(&s, [0.05, 0.0, 0.0, 0.0, 0.1, 0.0]);
        let a = denoise(&ctx, &t0, &mut rng(3)).unwrap();
        let b = denoise(&ctx, &t0, &mut rng(3)).unwrap();
        let c = denoise(&ctx, &t0, &mut rng(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn reprojection_context_has_one_record_per_point() {
        let cfg = SceneConfig {
            outlier_fraction: 0.0,
            ..SceneConfig::default()
        };
        let s = scene(cfg, 2);
        let ctx = prepare(&s, &SurrogateSpec::new(SurrogateKind::default_reprojection())).unwrap();
        assert_eq!(ctx.correspondence_count(), Some(500));
        assert_eq!(ctx.screened_out(), Some(0));
    }

    #[test]
    fn reprojection_screen_removes_outliers() {
        let s = scene(SceneConfig::default(), 3);
        let ctx = prepare(&s, &SurrogateSpec::new(SurrogateKind::default_reprojection())).unwrap();
        let Cache::Reprojection(t) = &ctx.cache else { panic!() };
        let outliers: Vec<Vector2<f64>> = s.observations.iter().filter(|o| o.outlier).map(|o| o.pixel).collect();
        let leaked = t
            .correspondences
            .iter()
            .filter(|c| c.inlier && outliers.contains(&c.pixel))
            .count();
        assert_eq!(ctx.correspondence_count(), Some(500));
        assert!(leaked <= 1, "{leaked} outliers kept");
        assert!(ctx.screened_out().unwrap() >= 24);
    }

    #[test]
    fn reprojection_noise_free_fixed_point() {
        let cfg = SceneConfig {
            pixel_noise_sigma: 0.0,
            outlier_fraction: 0.0,
            ..SceneConfig::default()
        };
        let s = scene(cfg, 4);
        let ctx = prepare(&s, &SurrogateSpec::new(SurrogateKind::default_reprojection())).unwrap();
        let c = denoise(&ctx, &s.gt_extrinsic, &mut rng(0)).unwrap();
        assert_eq!(c.status, DenoiseStatus::Ok);
        assert!(c.twist.norm() < 1e-9, "{}", c.twist);
    }

    #[test]
    fn reprojection_reduces_large_error() {
        let s = scene(SceneConfig::default(), 5);
        let ctx = prepare(&s, &SurrogateSpec::new(SurrogateKind::default_reprojection())).unwrap();
        let xi = Twist::from_array([0.1, -0.12, 0.08, 0.2, -0.15, 0.22]);
        let t0 = exp_map(&xi).unwrap().compose(&s.gt_extrinsic);
        let c = denoise(&ctx, &t0, &mut rng(0)).unwrap();
        let after = exp_map(&c.twist).unwrap().compose(&t0);
        let residual = log_map(&s.gt_extrinsic.compose(&after.inverse())).unwrap();
        assert!(residual.norm() < 0.2 * xi.norm(), "{} vs {}", residual.norm(), xi.norm());
    }

    #[test]
    fn reprojection_without_points_is_flagged_singular() {
        let cfg = SceneConfig {
            num_points: 0,
            ..SceneConfig::default()
        };
        let s = scene(cfg, 6);
        let ctx = prepare(&s, &SurrogateSpec::new(SurrogateKind::default_reprojection())).unwrap();
        let c = denoise(&ctx, &s.gt_extrinsic, &mut rng(0)).unwrap();
        assert_eq!(c.status, DenoiseStatus::Singular);
        assert_eq!(c.twist, Twist::zero());
    }

    #[test]
    fn damping_rescues_rank_deficient_system() {
        let mut h = Matrix6::identity();
        h[(5, 5)] = 1e-14;
        let g = Vector6::repeat(1.0);
        let dx = solve_damped(&h, &g).expect("damped solve");
        assert!(dx.iter().all(|v| v.is_finite()));
        assert!(solve_damped(&Matrix6::zeros(), &g).is_none());
    }

    #[test]
    fn prepare_is_deterministic() {
        let s = scene(SceneConfig::default(), 7);
        let spec = SurrogateSpec::new(SurrogateKind::default_reprojection());
        let a = prepare(&s, &spec).unwrap();
        let b = prepare(&s, &spec).unwrap();
        assert_eq!(a, b);
        let t0 = perturbed(&s, [0.02, 0.05, -0.03, 0.1, 0.0, -0.05]);
        let ca = denoise(&a, &t0, &mut rng(1)).unwrap();
        let cb = denoise(&b, &t0, &mut rng(1)).unwrap();
        assert_eq!(ca.twist.to_array(), cb.twist.to_array());
    }

    #[test]
    fn surrogate_x0_cases() {
        let s = default_scene();
        let xi_gt = Twist::from_array([0.05, -0.08, 0.1, 0.15, 0.2, -0.1]);
        let t0 = exp_map(&(-xi_gt)).unwrap().compose(&s.gt_extrinsic);
        let delta_gt = log_map(&s.gt_extrinsic.compose(&t0.inverse())).unwrap();
        let oracle = prepare(&s, &SurrogateSpec::oracle()).unwrap();
        let mut r = rng(2);
        for _ in 0..100 {
            let x_t = gaussian_twist(&mut r, 0.2);
            let (x0, _) = surrogate_x0(&oracle, &x_t, &t0, &mut r).unwrap();
            assert!((x0 - delta_gt).norm_inf() < 1e-10);
        }
        let (x0, _) = surrogate_x0(&oracle, &delta_gt, &t0, &mut r).unwrap();
        assert!((x0 - delta_gt).norm_inf() < 1e-10);
        let zero = prepare(&s, &SurrogateSpec::contraction(0.0, 0.0)).unwrap();
        let x_t = Twist::from_array([0.01, 0.02, 0.03, -0.1, 0.05, 0.02]);
        let (x0, _) = surrogate_x0(&zero, &x_t, &t0, &mut r).unwrap();
        assert!((x0 - x_t).norm_inf() < 1e-12);
    }

    #[test]
    fn training_targets_and_loss() {
        let s = default_scene();
        let sched = build_cosine_schedule(1000, 0.008).unwrap();
        let t0 = perturbed(&s, [0.05, 0.02, -0.03, 0.1, -0.05, 0.02]);
        let mut r = rng(8);
        for _ in 0..200 {
            let sample = training_targets(&s, &t0, &sched, &mut r).unwrap();
            assert!((1..=1000).contains(&sample.t));
            let expected = sample.x0 * sched.alpha_bar(sample.t).sqrt();
            assert!((sample.x_t - expected).norm_inf() < 1e-15);
        }
        let tiny = build_cosine_schedule(1, 0.008).unwrap();
        let sample = training_targets(&s, &t0, &tiny, &mut r).unwrap();
        assert_eq!(sample.t, 1);
        assert!(sample.x_t.norm_inf() < 1e-15);
        assert_eq!(l1_loss(&sample.x0, &sample.x0), 0.0);
        assert!((l1_loss(&Twist::translation(1.0, -2.0, 0.0), &Twist::zero()) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn denoiser_buffering_counts_prepares() {
        let s = default_scene();
        let spec = SurrogateSpec::range_dependent(0.9, 2.0, 0.01);
        let t0 = perturbed(&s, [0.05, 0.0, 0.0, 0.0, 0.1, 0.0]);
        let mut buffered = Denoiser::new(&s, &spec, Buffering::Enabled);
        let mut rebuilt = Denoiser::new(&s, &spec, Buffering::Disabled);
        let (mut ra, mut rb) = (rng(5), rng(5));
        for _ in 0..10 {
            let a = buffered.denoise(&t0, &mut ra).unwrap();
            let b = rebuilt.denoise(&t0, &mut rb).unwrap();
            assert_eq!(a.twist.to_array(), b.twist.to_array());
        }
        assert_eq!(buffered.prepare_calls(), 1);
        assert_eq!(rebuilt.prepare_calls(), 10);
        assert_eq!(buffered.evaluations(), 10);
    }

    #[test]
    fn context_scene_mismatch_is_rejected() {
        let a = scene(SceneConfig::default(), 1);
        let b = scene(SceneConfig::default(), 2);
        let spec = SurrogateSpec::oracle();
        let ctx = Arc::new(prepare(&a, &spec).unwrap());
        assert!(Denoiser::with_context(&a, &spec, Arc::clone(&ctx)).is_ok());
        assert!(matches!(
            Denoiser::with_context(&b, &spec, ctx),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(SurrogateSpec::contraction(1.5, 0.0).validate().is_err());
        assert!(SurrogateSpec::contraction(0.5, -1.0).validate().is_err());
        assert!(SurrogateSpec::range_dependent(0.9, -2.0, 0.01).validate().is_err());
        assert!(SurrogateSpec::reprojection(0, 2.0).validate().is_err());
        assert!(SurrogateSpec::reprojection(3, 0.0).validate().is_err());
        assert!(SurrogateSpec::range_dependent(0.9, 2.0, 0.01).validate().is_ok());
    }

    #[test]
    fn spec_parses_from_toml() {
        let spec: SurrogateSpec = toml::from_str("kind = \"range_dependent\"\nlambda0 = 0.9\nk = 2.0\nsigma0 = 0.01\n").unwrap();
        assert_eq!(spec, SurrogateSpec::range_dependent(0.9, 2.0, 0.01));
        let spec: SurrogateSpec = toml::from_str("kind = \"oracle\"\nseed = 4\n").unwrap();
        assert_eq!(spec.seed, 4);
    }
}
