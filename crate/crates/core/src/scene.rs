//! Synthetic calibration scenes: LiDAR points, pinhole intrinsics, a
//! ground-truth extrinsic and noisy pixel observations.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{log_map, EulerAngles, RigidTransform, Twist};

/// Points closer than this to the camera plane are not projected.
pub const NEAR_PLANE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// KITTI-class color camera.
    fn default() -> Self {
        Self {
            fx: 718.0,
            fy: 718.0,
            cx: 607.0,
            cy: 185.0,
            width: 1241,
            height: 376,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// Pixel of a camera-frame point, without bounds or depth checks.
    pub fn pixel(&self, q: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy)
    }
}

/// Rotation rows and translation, the human-readable form used in files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TransformRecord {
    fn from(t: &RigidTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<&TransformRecord> for RigidTransform {
    type Error = Error;

    fn try_from(rec: &TransformRecord) -> Result<Self> {
        let r = rec.rotation;
        RigidTransform::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(rec.translation),
        )
    }
}

/// LiDAR (x forward, y left, z up) to camera (x right, y down, z forward),
/// with a KITTI-like lever arm.
pub fn default_extrinsic() -> RigidTransform {
    RigidTransform::from_parts_unchecked(
        Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0),
        Vector3::new(-0.004, -0.076, -0.272),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub num_points: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub pixel_noise_sigma: f64,
    pub outlier_fraction: f64,
    pub intrinsics: CameraIntrinsics,
    pub gt_extrinsic: TransformRecord,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_points: 500,
            depth_min: 3.0,
            depth_max: 60.0,
            pixel_noise_sigma: 1.0,
            outlier_fraction: 0.05,
            intrinsics: CameraIntrinsics::default(),
            gt_extrinsic: TransformRecord::from(&default_extrinsic()),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(self.depth_min > NEAR_PLANE && self.depth_max > self.depth_min && self.depth_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "empty frustum: depth range [{}, {}] with near plane {NEAR_PLANE}",
                self.depth_min, self.depth_max
            )));
        }
        if !(self.pixel_noise_sigma >= 0.0 && self.pixel_noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("pixel noise must be >= 0".into()));
        }
        if !(0.0..0.5).contains(&self.outlier_fraction) {
            return Err(Error::InvalidArgument("outlier_fraction must be in [0, 0.5)".into()));
        }
        RigidTransform::try_from(&self.gt_extrinsic)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point_index: usize,
    pub pixel: Vector2<f64>,
    pub outlier: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: u64,
    /// LiDAR frame, meters.
    pub points: Vec<Vector3<f64>>,
    pub gt_extrinsic: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub observations: Vec<Observation>,
    pub pixel_noise_sigma: f64,
    pub outlier_fraction: f64,
}

/// Samples points uniformly over image position and depth, then observes
/// them through the ground-truth extrinsic with Gaussian pixel noise.
/// `round(n * outlier_fraction)` observations are replaced by uniform pixels.
pub fn generate_scene<R: Rng + ?Sized>(config: &SceneConfig, id: u64, rng: &mut R) -> Result<Scene> {
    config.validate()?;
    let k = config.intrinsics;
    let gt = RigidTransform::try_from(&config.gt_extrinsic)?;
    let gt_inv = gt.inverse();
    let noise = Normal::new(0.0, config.pixel_noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (w, h) = (k.width as f64, k.height as f64);

    let mut points = Vec::with_capacity(config.num_points);
    let mut observations = Vec::with_capacity(config.num_points);
    for i in 0..config.num_points {
        let u = rng.random_range(0.5..w - 0.5);
        let v = rng.random_range(0.5..h - 0.5);
        let z = rng.random_range(config.depth_min..config.depth_max);
        let q = Vector3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
        points.push(gt_inv.transform_point(&q));
        let mut pixel = k.pixel(&q);
        if config.pixel_noise_sigma > 0.0 {
            pixel += Vector2::new(noise.sample(rng), noise.sample(rng));
        }
        observations.push(Observation {
            point_index: i,
            pixel,
            outlier: false,
        });
    }
    let n_out = (config.num_points as f64 * config.outlier_fraction).round() as usize;
    if n_out > 0 {
        for i in index::sample(rng, config.num_points, n_out).into_vec() {
            observations[i].pixel = Vector2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
            observations[i].outlier = true;
        }
    }
    Ok(Scene {
        id,
        points,
        gt_extrinsic: gt,
        intrinsics: k,
        observations,
        pixel_noise_sigma: config.pixel_noise_sigma,
        outlier_fraction: config.outlier_fraction,
    })
}

/// Per-axis bounds of the initial-extrinsic perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Degrees, per Euler axis.
    pub rot_range: f64,
    /// Meters, per axis.
    pub trans_range: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            rot_range: 15.0,
            trans_range: 0.15,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rot_range >= 0.0 && self.trans_range >= 0.0) {
            return Err(Error::InvalidArgument("perturbation ranges must be >= 0".into()));
        }
        if self.rot_range >= 90.0 {
            return Err(Error::InvalidArgument("rotation range must stay below 90 degrees".into()));
        }
        Ok(())
    }
}

/// Draws Euler angles and a translation uniformly within the spec and returns
/// the log of the resulting transform. The initial extrinsic is
/// `exp(xi) * T_gt`.
pub fn sample_perturbation<R: Rng + ?Sized>(spec: &PerturbationSpec, rng: &mut R) -> Result<Twist> {
    spec.validate()?;
    let mut sym = |range: f64| range * (2.0 * rng.random::<f64>() - 1.0);
    let euler = EulerAngles::new(sym(spec.rot_range), sym(spec.rot_range), sym(spec.rot_range));
    let t = Vector3::new(sym(spec.trans_range), sym(spec.trans_range), sym(spec.trans_range));
    log_map(&RigidTransform::from_euler(euler, t))
}

/// Pinhole projection of a LiDAR point through extrinsic `t`.
pub fn project_point(p: &Vector3<f64>, t: &RigidTransform, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    let q = t.transform_point(p);
    if q.z <= NEAR_PLANE {
        return None;
    }
    let px = k.pixel(&q);
    k.contains(&px).then_some(px)
}

/// Nearest-depth-wins rasterization of a scene's points.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    depth: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        self.depth[(y * self.width + x) as usize]
    }

    pub fn occupied(&self) -> usize {
        self.depth.iter().filter(|d| d.is_some()).count()
    }

    /// ASCII (P2) PGM; empty pixels are 0, near is bright.
    pub fn write_pgm<W: Write>(&self, max_depth: f64, mut w: W) -> std::io::Result<()> {
        writeln!(w, "P2\n{} {}\n255", self.width, self.height)?;
        for row in self.depth.chunks(self.width as usize) {
            let line: Vec<String> = row
                .iter()
                .map(|d| match d {
                    None => "0".to_string(),
                    Some(z) => {
                        let v = 255.0 - 254.0 * (z / max_depth).clamp(0.0, 1.0);
                        format!("{}", v.round() as u8)
                    }
                })
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// One line per row, `.` for empty pixels and depth in meters otherwise.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for row in self.depth.chunks(self.width as usize) {
            let line: Vec<String> = row
                .iter()
                .map(|d| d.map_or_else(|| ".".to_string(), |z| format!("{z:.2}")))
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

pub fn render_projection_map(scene: &Scene, t: &RigidTransform) -> DepthMap {
    let k = &scene.intrinsics;
    let mut depth = vec![None; (k.width * k.height) as usize];
    for p in &scene.points {
        let Some(px) = project_point(p, t, k) else {
            continue;
        };
        let z = t.transform_point(p).z;
        let idx = (px.y as u32 * k.width + px.x as u32) as usize;
        match depth[idx] {
            Some(d) if d <= z => {}
            _ => depth[idx] = Some(z),
        }
    }
    DepthMap {
        width: k.width,
        height: k.height,
        depth,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneHeader {
    pub id: u64,
    pub intrinsics: CameraIntrinsics,
    pub gt_extrinsic: TransformRecord,
    pub pixel_noise_sigma: f64,
    pub outlier_fraction: f64,
    pub num_points: usize,
    /// Initial-extrinsic perturbation attached to this scene, when part of a dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<[f64; 6]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum SceneRecord {
    Header(SceneHeader),
    Point {
        index: usize,
        xyz: [f64; 3],
        pixel: [f64; 2],
        outlier: bool,
    },
}

/// Writes a scene as JSON lines: one header record, then one record per point
/// carrying its observation.
pub fn write_scene<W: Write>(scene: &Scene, perturbation: Option<&Twist>, mut w: W) -> Result<()> {
    if scene.observations.len() != scene.points.len()
        || scene.observations.iter().enumerate().any(|(i, o)| o.point_index != i)
    {
        return Err(Error::ContractViolation(
            "scene files need exactly one observation per point, in point order".into(),
        ));
    }
    let header = SceneRecord::Header(SceneHeader {
        id: scene.id,
        intrinsics: scene.intrinsics,
        gt_extrinsic: TransformRecord::from(&scene.gt_extrinsic),
        pixel_noise_sigma: scene.pixel_noise_sigma,
        outlier_fraction: scene.outlier_fraction,
        num_points: scene.points.len(),
        perturbation: perturbation.map(|p| p.to_array()),
    });
    let mut emit = |rec: &SceneRecord| -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::Numerical(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<scene stream>", e))
    };
    emit(&header)?;
    for (p, o) in scene.points.iter().zip(&scene.observations) {
        emit(&SceneRecord::Point {
            index: o.point_index,
            xyz: [p.x, p.y, p.z],
            pixel: [o.pixel.x, o.pixel.y],
            outlier: o.outlier,
        })?;
    }
    Ok(())
}

/// Inverse of [`write_scene`]; returns the scene and its optional perturbation.
pub fn read_scene<R: BufRead>(r: R) -> Result<(Scene, Option<Twist>)> {
    let mut lines = r.lines();
    let parse = |line: std::io::Result<String>| -> Result<SceneRecord> {
        let line = line.map_err(|e| Error::io("<scene stream>", e))?;
        serde_json::from_str(&line).map_err(|e| Error::Config(format!("bad scene record: {e}")))
    };
    let header = match lines.next().map(parse).transpose()? {
        Some(SceneRecord::Header(h)) => h,
        _ => return Err(Error::Config("scene file must start with a header record".into())),
    };
    let mut points = Vec::with_capacity(header.num_points);
    let mut observations = Vec::with_capacity(header.num_points);
    for line in lines {
        match parse(line)? {
            SceneRecord::Point {
                index,
                xyz,
                pixel,
                outlier,
            } => {
                if index != points.len() {
                    return Err(Error::Config(format!("point record {index} out of order")));
                }
                points.push(Vector3::from(xyz));
                observations.push(Observation {
                    point_index: index,
                    pixel: Vector2::from(pixel),
                    outlier,
                });
            }
            SceneRecord::Header(_) => return Err(Error::Config("duplicate scene header".into())),
        }
    }
    if points.len() != header.num_points {
        return Err(Error::Config(format!(
            "scene declares {} points, file has {}",
            header.num_points,
            points.len()
        )));
    }
    let scene = Scene {
        id: header.id,
        points,
        gt_extrinsic: RigidTransform::try_from(&header.gt_extrinsic)?,
        intrinsics: header.intrinsics,
        observations,
        pixel_noise_sigma: header.pixel_noise_sigma,
        outlier_fraction: header.outlier_fraction,
    };
    Ok((scene, header.perturbation.map(Twist::from_array)))
}
