//! SE(3) / se(3) arithmetic.
//!
//! A [`Twist`] is laid out translation first: `(rho, phi)`, with `phi` the
//! axis-angle rotation in radians. The exponential map uses the closed-form
//! Rodrigues formula for the rotation and the left Jacobian `V` for the
//! translation, falling back to a two-term Taylor series when `|phi| < 1e-8`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this rotation angle the exponential map switches to its Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Rotations whose angle is at least `PI - LOG_SINGULAR_MARGIN` have no unique logarithm.
pub const LOG_SINGULAR_MARGIN: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-9;

/// Element of se(3): translational part `rho` (meters) and rotational part `phi` (radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), Vector3::zeros())
    }

    pub fn rotation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::zeros(), Vector3::new(x, y, z))
    }

    /// `[rho_x, rho_y, rho_z, phi_x, phi_y, phi_z]`
    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Euclidean norm over all six components.
    pub fn norm(&self) -> f64 {
        (self.rho.norm_squared() + self.phi.norm_squared()).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sum of absolute component values.
    pub fn norm_l1(&self) -> f64 {
        self.to_array().iter().map(|v| v.abs()).sum()
    }
}

impl Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.rho + rhs.rho, self.phi + rhs.phi)
    }
}

impl AddAssign for Twist {
    fn add_assign(&mut self, rhs: Twist) {
        self.rho += rhs.rho;
        self.phi += rhs.phi;
    }
}

impl Sub for Twist {
    type Output = Twist;
    fn sub(self, rhs: Twist) -> Twist {
        Twist::new(self.rho - rhs.rho, self.phi - rhs.phi)
    }
}

impl Mul<f64> for Twist {
    type Output = Twist;
    fn mul(self, s: f64) -> Twist {
        Twist::new(self.rho * s, self.phi * s)
    }
}

impl Mul<Twist> for f64 {
    type Output = Twist;
    fn mul(self, xi: Twist) -> Twist {
        xi * self
    }
}

impl Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.rho, -self.phi)
    }
}

impl fmt::Display for Twist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.to_array();
        write!(
            f,
            "[{:.6}, {:.6}, {:.6} | {:.6}, {:.6}, {:.6}]",
            a[0], a[1], a[2], a[3], a[4], a[5]
        )
    }
}

/// Rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    /// Builds a transform, rejecting rotations that are not orthonormal with det +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if !t.is_valid() {
            return Err(Error::InvalidArgument(
                "rotation is not a proper orthonormal matrix".into(),
            ));
        }
        Ok(t)
    }

    pub fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_parts_unchecked(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts_unchecked(Matrix3::identity(), t)
    }

    pub fn from_euler(euler: EulerAngles, translation: Vector3<f64>) -> Self {
        Self::from_parts_unchecked(rotation_from_euler(euler), translation)
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }

    /// Orthonormality drift `|R R^T - I|_F`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.rotation * self.rotation.transpose() - Matrix3::identity()).norm()
    }

    pub fn is_valid(&self) -> bool {
        self.is_finite()
            && self.orthogonality_error() <= ORTHO_TOL
            && (self.rotation.determinant() - 1.0).abs() <= ORTHO_TOL
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        compose(self, other)
    }

    pub fn inverse(&self) -> RigidTransform {
        inverse(self)
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let (sin, cos) = sin_cos_of(&self.rotation);
        sin.atan2(cos)
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        compose(&self, &rhs)
    }
}

/// Fixed-axis XYZ (roll, pitch, yaw) angles in degrees: `R = Rz(rz) Ry(ry) Rx(rx)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl EulerAngles {
    pub fn new(rx: f64, ry: f64, rz: f64) -> Self {
        Self { rx, ry, rz }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.rx, self.ry, self.rz]
    }
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

// (sin, cos) of the rotation angle; sin is recovered from the skew part so it
// stays accurate for small angles.
fn sin_cos_of(r: &Matrix3<f64>) -> (f64, f64) {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = (vee(&(r - r.transpose())) * 0.5).norm();
    (sin, cos)
}

/// Exponential map se(3) -> SE(3).
pub fn exp_map(xi: &Twist) -> Result<RigidTransform> {
    if !xi.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite twist {xi}")));
    }
    Ok(exp_unchecked(xi))
}

pub(crate) fn exp_unchecked(xi: &Twist) -> RigidTransform {
    let theta = xi.phi.norm();
    let k = hat(&xi.phi);
    let k2 = k * k;
    let id = Matrix3::identity();
    let (rotation, v) = if theta < SMALL_ANGLE {
        (id + k + k2 * 0.5, id + k * 0.5 + k2 / 6.0)
    } else {
        let half = 0.5 * theta;
        let a = theta.sin() / theta;
        let b = 2.0 * half.sin().powi(2) / (theta * theta);
        let c = (theta - theta.sin()) / (theta * theta * theta);
        (id + k * a + k2 * b, id + k * b + k2 * c)
    };
    RigidTransform::from_parts_unchecked(rotation, v * xi.rho)
}

/// Logarithm SE(3) -> se(3). Fails for rotation angles within 1e-6 of pi.
pub fn log_map(t: &RigidTransform) -> Result<Twist> {
    let r = &t.rotation;
    let (sin, cos) = sin_cos_of(r);
    let theta = sin.atan2(cos);
    if theta >= PI - LOG_SINGULAR_MARGIN {
        return Err(Error::LogSingularity { angle: theta });
    }
    let w = vee(&(r - r.transpose())) * 0.5;
    let phi = if theta < SMALL_ANGLE {
        w
    } else if sin > 1e-3 || cos > 0.0 {
        w * (theta / sin)
    } else {
        // Near pi the skew part vanishes; read the axis off the symmetric part.
        let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
        let one_minus_cos = 1.0 - cos;
        let (i, _) = (0..3)
            .map(|i| (i, sym[(i, i)]))
            .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        let col = sym.column(i).into_owned();
        let mut axis = col / (sym[(i, i)] * one_minus_cos).sqrt();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        axis * theta
    };
    let rho = left_jacobian_inverse(&phi, theta) * t.translation;
    Ok(Twist::new(rho, phi))
}

fn left_jacobian_inverse(phi: &Vector3<f64>, theta: f64) -> Matrix3<f64> {
    let k = hat(phi);
    // (1 - (theta/2) cot(theta/2)) / theta^2, series below 1e-2 to avoid cancellation
    let c = if theta < 1e-2 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

/// `a * b`, re-orthonormalizing the rotation if it has drifted beyond 1e-9.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    let mut out = RigidTransform::from_parts_unchecked(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    );
    if out.orthogonality_error() > ORTHO_TOL {
        out.rotation = orthonormalize(&out.rotation);
    }
    out
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation.transpose();
    RigidTransform::from_parts_unchecked(rt, -(rt * t.translation))
}

/// Nearest rotation in the Frobenius sense (polar factor).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rotation_from_euler(e: EulerAngles) -> Matrix3<f64> {
    rot_z(e.rz.to_radians()) * rot_y(e.ry.to_radians()) * rot_x(e.rx.to_radians())
}

fn wrap_degrees(a: f64) -> f64 {
    if a <= -180.0 {
        a + 360.0
    } else if a > 180.0 {
        a - 360.0
    } else {
        a
    }
}

/// Fixed-axis XYZ Euler decomposition of the rotation of `t`, in degrees.
///
/// At gimbal lock (`|ry|` within 1e-7 degrees of 90) `rx` is set to zero and
/// the whole in-plane rotation is folded into `rz`.
pub fn euler_from_rotation(t: &RigidTransform) -> EulerAngles {
    let r = &t.rotation;
    let cy = (r[(0, 0)] * r[(0, 0)] + r[(1, 0)] * r[(1, 0)]).sqrt();
    let ry = (-r[(2, 0)]).atan2(cy).to_degrees();
    if (ry.abs() - 90.0).abs() < 1e-7 {
        let rz = (-r[(0, 1)]).atan2(r[(1, 1)]).to_degrees();
        return EulerAngles::new(0.0, wrap_degrees(ry), wrap_degrees(rz));
    }
    let rx = r[(2, 1)].atan2(r[(2, 2)]).to_degrees();
    let rz = r[(1, 0)].atan2(r[(0, 0)]).to_degrees();
    EulerAngles::new(wrap_degrees(rx), wrap_degrees(ry), wrap_degrees(rz))
}
