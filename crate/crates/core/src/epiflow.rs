//! Epipolar consistency of optical flow.
//!
//! For a static point, the flow endpoint in the second frame must lie on the
//! epipolar line `L = F·[p, 1]` of its source pixel. Pixels whose endpoint
//! strays further than a threshold from that line are flagged as dynamic.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camgeo::{CameraModel, RigidPose};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Default dynamic-pixel threshold (px).
pub const DEFAULT_THRESHOLD: f64 = 10.0;
/// Pixels closer than this to the epipole are never flagged.
pub const EPIPOLE_EXCLUSION_PX: f64 = 2.0;

/// Per-pixel displacement to the next frame; `None` where unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub vectors: Grid<Option<Vector2<f64>>>,
}

impl FlowField {
    pub fn new(vectors: Grid<Option<Vector2<f64>>>) -> Self {
        Self { vectors }
    }

    pub fn width(&self) -> usize {
        self.vectors.width()
    }

    pub fn height(&self) -> usize {
        self.vectors.height()
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Vector2<f64>> {
        *self.vectors.get(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FundamentalForm {
    /// `K₁⁻ᵀ [t]ₓ R K₀⁻¹`
    #[default]
    Standard,
    /// `K₁ᵀ [t]ₓ R K₀`, kept only for reproducing results that used it.
    Verbatim,
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Fundamental matrix mapping pixels of frame 0 to epipolar lines in frame 1.
pub fn fundamental(
    cam0: &CameraModel,
    cam1: &CameraModel,
    pose_0_to_1: &RigidPose,
    form: FundamentalForm,
) -> Result<Matrix3<f64>> {
    let k0 = cam0.as_pinhole()?;
    let k1 = cam1.as_pinhole()?;
    let t = pose_0_to_1.translation();
    if t.norm() < 1e-12 {
        return Err(Error::DegenerateMotion(format!(
            "translation norm {:e} is too small for epipolar geometry",
            t.norm()
        )));
    }
    let essential = skew(t) * pose_0_to_1.rotation();
    Ok(match form {
        FundamentalForm::Standard => k1.k_inverse().transpose() * essential * k0.k_inverse(),
        FundamentalForm::Verbatim => k1.k_matrix().transpose() * essential * k0.k_matrix(),
    })
}

pub fn epipolar_line(f: &Matrix3<f64>, p: Vector2<f64>) -> Vector3<f64> {
    f * Vector3::new(p.x, p.y, 1.0)
}

/// Distance (px) from the flow endpoint `p + flow` to the epipolar line of `p`.
/// `None` when the line is undefined (the pixel sits on the epipole).
pub fn epipolar_distance(f: &Matrix3<f64>, p: Vector2<f64>, flow: Vector2<f64>) -> Option<f64> {
    let l = epipolar_line(f, p);
    let norm = (l.x * l.x + l.y * l.y).sqrt();
    let scale = l.amax();
    if norm <= 1e-12 * scale || norm == 0.0 {
        return None;
    }
    let q = p + flow;
    Some((l.x * q.x + l.y * q.y + l.z).abs() / norm)
}

/// Pixel location of the epipole in frame 0, if it is finite.
pub fn epipole(f: &Matrix3<f64>) -> Option<Vector2<f64>> {
    let svd = f.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let e = v_t.row(idx).transpose();
    if e.z.abs() < 1e-12 * e.norm() {
        return None;
    }
    Some(Vector2::new(e.x / e.z, e.y / e.z))
}

#[derive(Debug, Clone)]
pub struct DynamicMask {
    /// `true` where the flow deviates from the epipolar line by more than the threshold.
    pub dynamic: Grid<bool>,
    /// Pixels without usable flow; never marked dynamic.
    pub invalid_flow: Grid<bool>,
    /// Pixels skipped because they sit next to the epipole.
    pub near_epipole: usize,
}

impl DynamicMask {
    pub fn dynamic_fraction(&self) -> f64 {
        let n = self.dynamic.as_slice().iter().filter(|d| **d).count();
        n as f64 / self.dynamic.len().max(1) as f64
    }
}

pub fn dynamic_mask(f: &Matrix3<f64>, flow: &FlowField, threshold: f64) -> Result<DynamicMask> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let (w, h) = (flow.width(), flow.height());
    let epi = epipole(f);
    let states: Vec<(bool, bool, bool)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let p = Vector2::new((i % w) as f64, (i / w) as f64);
            let Some(v) = flow.vectors.as_slice()[i] else {
                return (false, true, false);
            };
            if !(v.x.is_finite() && v.y.is_finite()) {
                return (false, true, false);
            }
            if epi.is_some_and(|e| (e - p).norm() <= EPIPOLE_EXCLUSION_PX) {
                return (false, false, true);
            }
            match epipolar_distance(f, p, v) {
                Some(d) => (d > threshold, false, false),
                None => (false, false, true),
            }
        })
        .collect();
    let dynamic = states.iter().map(|s| s.0).collect();
    let invalid = states.iter().map(|s| s.1).collect();
    let near_epipole = states.iter().filter(|s| s.2).count();
    Ok(DynamicMask {
        dynamic: Grid::from_vec(w, h, dynamic)?,
        invalid_flow: Grid::from_vec(w, h, invalid)?,
        near_epipole,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camgeo::Pinhole;
    use approx::assert_abs_diff_eq;

    fn cam() -> CameraModel {
        CameraModel::Pinhole(Pinhole::new(720.0, 720.0, 320.0, 96.0, 640, 192))
    }

    fn x_translation() -> Matrix3<f64> {
        let pose = RigidPose::from_translation(Vector3::new(-1.0, 0.0, 0.0));
        fundamental(&cam(), &cam(), &pose, FundamentalForm::Standard).unwrap()
    }

    #[test]
    fn horizontal_epipolar_lines() {
        let f = x_translation();
        for &(u, v) in &[(30.0, 40.0), (600.0, 10.0), (0.0, 191.0)] {
            let l = epipolar_line(&f, Vector2::new(u, v));
            assert!(l.x.abs() < 1e-15 * l.amax());
            // line is y = v
            assert_abs_diff_eq!(-l.z / l.y, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn distance_examples() {
        let f = x_translation();
        let p = Vector2::new(30.0, 40.0);
        assert_abs_diff_eq!(
            epipolar_distance(&f, p, Vector2::new(5.0, 0.0)).unwrap(),
            0.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            epipolar_distance(&f, p, Vector2::new(5.0, 3.0)).unwrap(),
            3.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            epipolar_distance(&f, p, Vector2::zeros()).unwrap(),
            0.0,
            epsilon = 1e-9
        );
        let d1 = epipolar_distance(&f, p, Vector2::new(2.0, -7.0)).unwrap();
        let d2 = epipolar_distance(&(f * 37.5), p, Vector2::new(2.0, -7.0)).unwrap();
        assert_abs_diff_eq!(d1, d2, epsilon = 1e-12);
    }

    #[test]
    fn zero_translation_is_degenerate() {
        let r = fundamental(
            &cam(),
            &cam(),
            &RigidPose::identity(),
            FundamentalForm::Standard,
        );
        assert!(matches!(r, Err(Error::DegenerateMotion(_))));
    }

    #[test]
    fn forward_motion_epipole_at_principal_point() {
        let pose = RigidPose::from_translation(Vector3::new(0.0, 0.0, -1.0));
        let f = fundamental(&cam(), &cam(), &pose, FundamentalForm::Standard).unwrap();
        let e = epipole(&f).unwrap();
        assert_abs_diff_eq!(e, Vector2::new(320.0, 96.0), epsilon = 1e-6);
        assert_eq!(
            epipolar_distance(&f, Vector2::new(320.0, 96.0), Vector2::zeros()),
            None
        );
    }

    #[test]
    fn mask_threshold_semantics() {
        let f = x_translation();
        let mut vectors = Grid::filled(4, 3, Some(Vector2::new(3.0, 0.0)));
        *vectors.get_mut(1, 1) = Some(Vector2::new(0.0, 12.0));
        *vectors.get_mut(2, 2) = None;
        let flow = FlowField::new(vectors);
        let m = dynamic_mask(&f, &flow, 10.0).unwrap();
        assert!(*m.dynamic.get(1, 1));
        assert_eq!(m.dynamic.as_slice().iter().filter(|d| **d).count(), 1);
        assert!(*m.invalid_flow.get(2, 2));
        assert!(!*m.dynamic.get(2, 2));
        let none = dynamic_mask(&f, &flow, f64::INFINITY).unwrap();
        assert!(none.dynamic.as_slice().iter().all(|d| !d));
        assert!(dynamic_mask(&f, &flow, 0.0).is_err());
    }
}
