//! Camera models and rigid poses.
//!
//! Three projection models are supported:
//!
//! * plain pinhole (`fx, fy, cx, cy`);
//! * the Mei unified model: the point is normalized onto the unit sphere,
//!   shifted by the mirror parameter `xi`, projected, radially distorted with
//!   `(1 + k1 r² + k2 r⁴)` and scaled by `gamma_x, gamma_y`;
//! * the polynomial (equidistant) fisheye model: incidence angle
//!   `θ = atan(r)` is mapped to `θ_d = θ (1 + k1 θ² + k2 θ⁴ + k3 θ⁶ + k4 θ⁸)`.
//!
//! Unprojection of the two distorted models inverts the odd radial
//! polynomial with Newton's method.

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Newton iterations allowed when inverting a distortion polynomial.
pub const NEWTON_MAX_ITER: usize = 20;
/// Step size below which the Newton inversion is considered converged.
pub const NEWTON_TOL: f64 = 1e-12;
/// Minimum admissible `z̃ + ξ` for the Mei model.
pub const MEI_EPS: f64 = 1e-9;

/// How a scalar depth value is measured along a pixel ray.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthKind {
    /// Distance along the optical axis.
    #[default]
    ZDepth,
    /// Euclidean distance from the camera center.
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pinhole {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeiCamera {
    pub gamma_x: f64,
    pub gamma_y: f64,
    pub u0: f64,
    pub v0: f64,
    pub xi: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisheyePoly {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub k4: f64,
    pub width: usize,
    pub height: usize,
}

/// Camera intrinsics; the single authority for projecting and unprojecting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CameraModel {
    Pinhole(Pinhole),
    Mei(MeiCamera),
    FisheyePoly(FisheyePoly),
}

/// Outcome of projecting a 3D point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Inside `[0, W) × [0, H)`.
    Visible(Vector2<f64>),
    /// Well defined but outside the image bounds.
    OutOfImage(Vector2<f64>),
    /// Behind the camera or outside the model's valid region.
    Invalid,
}

impl Projection {
    pub fn pixel(&self) -> Option<Vector2<f64>> {
        match *self {
            Projection::Visible(p) | Projection::OutOfImage(p) => Some(p),
            Projection::Invalid => None,
        }
    }

    pub fn visible(&self) -> Option<Vector2<f64>> {
        match *self {
            Projection::Visible(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_visible(&self) -> bool {
        matches!(self, Projection::Visible(_))
    }
}

/// A unit viewing ray in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray3 {
    pub direction: Unit<Vector3<f64>>,
}

impl Ray3 {
    pub fn new(direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::invalid("ray direction must be finite and non-zero"));
        }
        Ok(Self {
            direction: Unit::new_unchecked(direction / n),
        })
    }

    /// Point on the ray at the given depth.
    pub fn point_at(&self, depth: f64, kind: DepthKind) -> Result<Vector3<f64>> {
        match kind {
            DepthKind::Radial => Ok(self.direction.into_inner() * depth),
            DepthKind::ZDepth => Ok(self.direction.into_inner() * self.radial_from_z(depth)?),
        }
    }

    pub fn radial_from_z(&self, z: f64) -> Result<f64> {
        let dz = self.direction.z;
        if dz <= 0.0 {
            return Err(Error::invalid(
                "z-depth is undefined for rays that do not point forward",
            ));
        }
        Ok(z / dz)
    }

    pub fn z_from_radial(&self, radial: f64) -> f64 {
        radial * self.direction.z
    }
}

/// Convert a z-depth to a radial distance along the ray through a point.
pub fn z_to_radial(point_direction: &Vector3<f64>, z: f64) -> Result<f64> {
    Ray3::new(*point_direction)?.radial_from_z(z)
}

/// Convert a radial distance to z-depth along the ray through a point.
pub fn radial_to_z(point_direction: &Vector3<f64>, radial: f64) -> Result<f64> {
    Ok(Ray3::new(*point_direction)?.z_from_radial(radial))
}

/// Invert `x + c[0] x³ + c[1] x⁵ + ... = target` by Newton from `x₀ = target`.
fn invert_odd_poly(target: f64, coeffs: &[f64], what: &'static str) -> Result<f64> {
    let mut x = target;
    let mut last_step = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let (value, deriv) = odd_poly(x, coeffs);
        if deriv <= 0.0 || !deriv.is_finite() {
            return Err(Error::Numerical {
                what,
                residual: (value - target).abs(),
            });
        }
        let step = (value - target) / deriv;
        x -= step;
        last_step = step.abs();
        if last_step < NEWTON_TOL {
            return Ok(x);
        }
    }
    Err(Error::Numerical {
        what,
        residual: last_step,
    })
}

/// Value and derivative of `x + c[0] x³ + c[1] x⁵ + ...`.
fn odd_poly(x: f64, coeffs: &[f64]) -> (f64, f64) {
    let x2 = x * x;
    let mut value = x;
    let mut deriv = 1.0;
    let mut pow = x; // x^(2i+1)
    for (i, &c) in coeffs.iter().enumerate() {
        let odd = (2 * i + 3) as f64;
        deriv += odd * c * pow * x;
        pow *= x2;
        value += c * pow;
    }
    (value, deriv)
}

fn ensure_finite3(p: &Vector3<f64>) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("point must be finite"))
    }
}

impl Pinhole {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

impl CameraModel {
    pub fn name(&self) -> &'static str {
        match self {
            CameraModel::Pinhole(_) => "pinhole",
            CameraModel::Mei(_) => "mei",
            CameraModel::FisheyePoly(_) => "fisheye_poly",
        }
    }

    pub fn width(&self) -> usize {
        match self {
            CameraModel::Pinhole(c) => c.width,
            CameraModel::Mei(c) => c.width,
            CameraModel::FisheyePoly(c) => c.width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            CameraModel::Pinhole(c) => c.height,
            CameraModel::Mei(c) => c.height,
            CameraModel::FisheyePoly(c) => c.height,
        }
    }

    /// Horizontal focal length (`gamma_x` for the Mei model).
    pub fn fx(&self) -> f64 {
        match self {
            CameraModel::Pinhole(c) => c.fx,
            CameraModel::Mei(c) => c.gamma_x,
            CameraModel::FisheyePoly(c) => c.fx,
        }
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        match self {
            CameraModel::Pinhole(c) => Vector2::new(c.cx, c.cy),
            CameraModel::Mei(c) => Vector2::new(c.u0, c.v0),
            CameraModel::FisheyePoly(c) => Vector2::new(c.cx, c.cy),
        }
    }

    pub fn as_pinhole(&self) -> Result<&Pinhole> {
        match self {
            CameraModel::Pinhole(p) => Ok(p),
            other => Err(Error::UnsupportedModel {
                expected: "pinhole",
                got: other.name(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (fx, fy, cx, cy) = match self {
            CameraModel::Pinhole(c) => (c.fx, c.fy, c.cx, c.cy),
            CameraModel::Mei(c) => {
                if !(c.xi.is_finite() && c.k1.is_finite() && c.k2.is_finite()) {
                    return Err(Error::InvalidConfig("mei xi, k1, k2 must be finite".into()));
                }
                (c.gamma_x, c.gamma_y, c.u0, c.v0)
            }
            CameraModel::FisheyePoly(c) => {
                if ![c.k1, c.k2, c.k3, c.k4].iter().all(|k| k.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "fisheye coefficients must be finite".into(),
                    ));
                }
                (c.fx, c.fy, c.cx, c.cy)
            }
        };
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive, got ({fx}, {fy})"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidConfig(
                "principal point must be finite".into(),
            ));
        }
        if self.width() == 0 || self.height() == 0 {
            return Err(Error::InvalidConfig(
                "image size must be at least 1x1".into(),
            ));
        }
        Ok(())
    }

    fn in_image(&self, p: Vector2<f64>) -> Projection {
        let inside =
            p.x >= 0.0 && p.y >= 0.0 && p.x < self.width() as f64 && p.y < self.height() as f64;
        if inside {
            Projection::Visible(p)
        } else {
            Projection::OutOfImage(p)
        }
    }

    /// Pixel coordinates of a camera-frame point, ignoring image bounds.
    pub fn project_unbounded(&self, point: &Vector3<f64>) -> Result<Option<Vector2<f64>>> {
        ensure_finite3(point)?;
        let (x, y, z) = (point.x, point.y, point.z);
        let pixel = match self {
            CameraModel::Pinhole(c) => {
                if z <= 0.0 {
                    return Ok(None);
                }
                Vector2::new(c.fx * x / z + c.cx, c.fy * y / z + c.cy)
            }
            CameraModel::Mei(c) => {
                let norm = point.norm();
                if norm == 0.0 {
                    return Ok(None);
                }
                let (xt, yt, zt) = (x / norm, y / norm, z / norm);
                let denom = zt + c.xi;
                if denom <= MEI_EPS {
                    return Ok(None);
                }
                let xs = xt / denom;
                let ys = yt / denom;
                let r = (xs * xs + ys * ys).sqrt();
                let (rd, deriv) = odd_poly(r, &[c.k1, c.k2]);
                if deriv <= 0.0 {
                    return Ok(None);
                }
                let scale = if r > 0.0 { rd / r } else { 1.0 };
                Vector2::new(c.gamma_x * xs * scale + c.u0, c.gamma_y * ys * scale + c.v0)
            }
            CameraModel::FisheyePoly(c) => {
                if z <= 0.0 {
                    return Ok(None);
                }
                let a = x / z;
                let b = y / z;
                let r = (a * a + b * b).sqrt();
                let theta = r.atan();
                let (theta_d, deriv) = odd_poly(theta, &[c.k1, c.k2, c.k3, c.k4]);
                if deriv <= 0.0 {
                    return Ok(None);
                }
                let scale = if r > 1e-15 { theta_d / r } else { 1.0 };
                Vector2::new(c.fx * a * scale + c.cx, c.fy * b * scale + c.cy)
            }
        };
        Ok(Some(pixel))
    }

    /// Project a camera-frame point (meters) to a pixel.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Projection> {
        Ok(match self.project_unbounded(point)? {
            Some(p) => self.in_image(p),
            None => Projection::Invalid,
        })
    }

    /// Viewing ray through a pixel.
    pub fn ray(&self, pixel: Vector2<f64>) -> Result<Ray3> {
        if !(pixel.x.is_finite() && pixel.y.is_finite()) {
            return Err(Error::invalid("pixel must be finite"));
        }
        let dir = match self {
            CameraModel::Pinhole(c) => {
                Vector3::new((pixel.x - c.cx) / c.fx, (pixel.y - c.cy) / c.fy, 1.0)
            }
            CameraModel::Mei(c) => {
                let mx = (pixel.x - c.u0) / c.gamma_x;
                let my = (pixel.y - c.v0) / c.gamma_y;
                let rd = (mx * mx + my * my).sqrt();
                let (xs, ys) = if rd > 0.0 {
                    let r = invert_odd_poly(rd, &[c.k1, c.k2], "mei radial undistortion")?;
                    (mx * r / rd, my * r / rd)
                } else {
                    (0.0, 0.0)
                };
                let rho2 = xs * xs + ys * ys;
                let disc = 1.0 + (1.0 - c.xi * c.xi) * rho2;
                if disc < 0.0 {
                    return Err(Error::invalid(format!(
                        "pixel ({}, {}) lies outside the Mei model's image disc",
                        pixel.x, pixel.y
                    )));
                }
                let factor = (c.xi + disc.sqrt()) / (1.0 + rho2);
                Vector3::new(factor * xs, factor * ys, factor - c.xi)
            }
            CameraModel::FisheyePoly(c) => {
                let mx = (pixel.x - c.cx) / c.fx;
                let my = (pixel.y - c.cy) / c.fy;
                let theta_d = (mx * mx + my * my).sqrt();
                if theta_d == 0.0 {
                    Vector3::new(0.0, 0.0, 1.0)
                } else {
                    let theta = invert_odd_poly(
                        theta_d,
                        &[c.k1, c.k2, c.k3, c.k4],
                        "fisheye theta inversion",
                    )?;
                    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta) {
                        return Err(Error::invalid(format!(
                            "pixel ({}, {}) maps beyond 90 degrees of incidence",
                            pixel.x, pixel.y
                        )));
                    }
                    let s = theta.sin() / theta_d;
                    Vector3::new(mx * s, my * s, theta.cos())
                }
            }
        };
        Ray3::new(dir)
    }

    /// Back-project a pixel with a depth measured as `kind`.
    pub fn unproject(
        &self,
        pixel: Vector2<f64>,
        depth: f64,
        kind: DepthKind,
    ) -> Result<Vector3<f64>> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(Error::invalid(format!(
                "depth must be positive, got {depth}"
            )));
        }
        if let (CameraModel::Pinhole(c), DepthKind::ZDepth) = (self, kind) {
            return Ok(Vector3::new(
                (pixel.x - c.cx) / c.fx * depth,
                (pixel.y - c.cy) / c.fy * depth,
                depth,
            ));
        }
        self.ray(pixel)?.point_at(depth, kind)
    }
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 12]", into = "[f64; 12]")]
pub struct RigidPose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Build from a rotation matrix; rejects matrices that are not proper rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("pose entries must be finite"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if ortho > Self::ORTHONORMAL_TOL || (det - 1.0).abs() > Self::ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (|RtR - I| = {ortho:e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::from_parts(Rotation3::identity(), translation)
    }

    /// Row-major 3×4 `[R | t]`, as in KITTI odometry pose files.
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 12 {
            return Err(Error::invalid(format!(
                "a 3x4 pose needs 12 values, got {}",
                values.len()
            )));
        }
        let r = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let t = Vector3::new(values[3], values[7], values[11]);
        Self::new(r, t)
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = self.rotation.matrix();
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        self.rotation.matrix()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let r_inv = self.rotation.inverse();
        RigidPose {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }
}

impl TryFrom<[f64; 12]> for RigidPose {
    type Error = Error;

    fn try_from(values: [f64; 12]) -> Result<Self> {
        RigidPose::from_row_major(&values)
    }
}

impl From<RigidPose> for [f64; 12] {
    fn from(pose: RigidPose) -> Self {
        pose.to_row_major()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn kitti_pinhole() -> CameraModel {
        CameraModel::Pinhole(Pinhole::new(700.0, 700.0, 600.0, 180.0, 1242, 375))
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = kitti_pinhole()
            .project(&Vector3::new(0.0, 0.0, 10.0))
            .unwrap();
        assert_eq!(p, Projection::Visible(Vector2::new(600.0, 180.0)));
    }

    #[test]
    fn pinhole_hand_evaluated() {
        let cam = kitti_pinhole();
        let px = cam.project(&Vector3::new(2.0, 0.0, 20.0)).unwrap();
        assert_eq!(px.pixel().unwrap(), Vector2::new(670.0, 180.0));
        let p = cam
            .unproject(Vector2::new(670.0, 180.0), 20.0, DepthKind::ZDepth)
            .unwrap();
        assert_abs_diff_eq!(p, Vector3::new(2.0, 0.0, 20.0), epsilon = 1e-12);
    }

    #[test]
    fn pinhole_behind_is_not_an_error() {
        let cam = kitti_pinhole();
        assert_eq!(
            cam.project(&Vector3::new(1.0, 1.0, -2.0)).unwrap(),
            Projection::Invalid
        );
        assert_eq!(
            cam.project(&Vector3::new(1.0, 1.0, 0.0)).unwrap(),
            Projection::Invalid
        );
    }

    #[test]
    fn non_finite_point_is_rejected() {
        let cam = kitti_pinhole();
        assert!(matches!(
            cam.project(&Vector3::new(f64::NAN, 0.0, 1.0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn out_of_image_flagged() {
        let cam = kitti_pinhole();
        let p = cam.project(&Vector3::new(100.0, 0.0, 1.0)).unwrap();
        assert!(matches!(p, Projection::OutOfImage(_)));
    }

    #[test]
    fn mei_on_axis_maps_to_principal_point() {
        for &(xi, k1, k2) in &[(0.0, 0.0, 0.0), (0.9, -0.2, 0.05), (2.1, 0.3, -0.01)] {
            let cam = CameraModel::Mei(MeiCamera {
                gamma_x: 1300.0,
                gamma_y: 1290.0,
                u0: 700.0,
                v0: 705.0,
                xi,
                k1,
                k2,
                width: 1400,
                height: 1400,
            });
            let p = cam.project(&Vector3::new(0.0, 0.0, 7.3)).unwrap();
            assert_eq!(p.pixel().unwrap(), Vector2::new(700.0, 705.0));
        }
    }

    #[test]
    fn mei_rejects_points_beyond_mirror_region() {
        let cam = CameraModel::Mei(MeiCamera {
            gamma_x: 500.0,
            gamma_y: 500.0,
            u0: 320.0,
            v0: 240.0,
            xi: 0.5,
            k1: 0.0,
            k2: 0.0,
            width: 640,
            height: 480,
        });
        // z̃ = -0.6 < -xi
        let p = cam.project(&Vector3::new(0.8, 0.0, -0.6)).unwrap();
        assert_eq!(p, Projection::Invalid);
    }

    #[test]
    fn principal_point_radial_depth_lands_on_axis() {
        let cams = [
            kitti_pinhole(),
            CameraModel::Mei(MeiCamera {
                gamma_x: 800.0,
                gamma_y: 800.0,
                u0: 320.0,
                v0: 240.0,
                xi: 1.2,
                k1: -0.1,
                k2: 0.01,
                width: 640,
                height: 480,
            }),
            CameraModel::FisheyePoly(FisheyePoly {
                fx: 300.0,
                fy: 300.0,
                cx: 320.0,
                cy: 240.0,
                k1: 0.05,
                k2: -0.01,
                k3: 0.0,
                k4: 0.0,
                width: 640,
                height: 480,
            }),
        ];
        for cam in &cams {
            let p = cam
                .unproject(cam.principal_point(), 4.5, DepthKind::Radial)
                .unwrap();
            assert_abs_diff_eq!(p, Vector3::new(0.0, 0.0, 4.5), epsilon = 1e-12);
        }
    }

    #[test]
    fn fisheye_round_trip_sub_micropixel() {
        let cam = CameraModel::FisheyePoly(FisheyePoly {
            fx: 350.0,
            fy: 352.0,
            cx: 640.0,
            cy: 400.0,
            k1: 0.02,
            k2: -0.005,
            k3: 0.001,
            k4: -0.0002,
            width: 1280,
            height: 800,
        });
        for &(u, v) in &[
            (300.0, 150.0),
            (640.0, 400.0),
            (900.0, 650.0),
            (641.0, 399.5),
        ] {
            let px = Vector2::new(u, v);
            let p = cam.unproject(px, 5.0, DepthKind::Radial).unwrap();
            assert_abs_diff_eq!(p.norm(), 5.0, epsilon = 1e-12);
            let back = cam.project(&p).unwrap().pixel().unwrap();
            assert!((back - px).norm() < 1e-6);
        }
    }

    #[test]
    fn newton_failure_reports_residual() {
        // θ_d(θ) = θ - θ³ turns over at θ = 1/√3, so large θ_d has no preimage.
        let err = invert_odd_poly(1.0, &[-1.0], "test").unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }

    #[test]
    fn z_and_radial_conversions_are_inverse() {
        let dir = Vector3::new(0.3, -0.2, 1.0);
        let r = z_to_radial(&dir, 7.0).unwrap();
        assert_abs_diff_eq!(r, 7.0 * dir.norm(), epsilon = 1e-12);
        assert_abs_diff_eq!(radial_to_z(&dir, r).unwrap(), 7.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_identity_and_translation() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(RigidPose::identity().transform(&p), p);
        let t = RigidPose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(t.transform(&Vector3::zeros()), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RigidPose::new(m, Vector3::zeros()).is_err());
        let m = Matrix3::identity() * 1.01;
        assert!(RigidPose::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn pose_row_major_round_trip() {
        let pose = RigidPose::from_parts(
            Rotation3::from_euler_angles(0.1, -0.4, 0.7),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let again = RigidPose::from_row_major(&pose.to_row_major()).unwrap();
        assert_abs_diff_eq!(again.rotation(), pose.rotation(), epsilon = 1e-15);
        assert_eq!(again.translation(), pose.translation());
    }

    #[test]
    fn camera_config_json_uses_model_tag() {
        let json =
            r#"{"model":"pinhole","fx":700,"fy":700,"cx":600,"cy":180,"width":1242,"height":375}"#;
        let cam: CameraModel = serde_json::from_str(json).unwrap();
        assert_eq!(cam, kitti_pinhole());
        let json = r#"{"model":"fisheye_poly","fx":300,"fy":300,"cx":320,"cy":240,"k1":0.1,"width":640,"height":480}"#;
        let cam: CameraModel = serde_json::from_str(json).unwrap();
        assert_eq!(cam.name(), "fisheye_poly");
    }

    #[test]
    fn validate_rejects_bad_intrinsics() {
        let bad = CameraModel::Pinhole(Pinhole::new(-1.0, 700.0, 0.0, 0.0, 10, 10));
        assert!(bad.validate().is_err());
        let bad = CameraModel::Pinhole(Pinhole::new(1.0, 700.0, 0.0, 0.0, 0, 10));
        assert!(bad.validate().is_err());
        assert!(kitti_pinhole().validate().is_ok());
    }
}
