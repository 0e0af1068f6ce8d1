//! 3D anchor priors, ground filtering and 2D/3D box consistency.
//!
//! Camera frame: x right, y down, z forward. Boxes are described by their
//! geometric center, dimensions `(w, h, l)` and yaw `θ` about the y axis;
//! `l` runs along the object's local x axis, `h` along y and `w` along z.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camgeo::Pinhole;
use crate::error::{Error, Result};

/// Axis-aligned box `[x1, y1, x2, y2]` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2d {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for Box2d {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Box2d> for [f64; 4] {
    fn from(b: Box2d) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl Box2d {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x2 > self.x1
            && self.y2 > self.y1
    }

    pub fn intersection(&self, o: &Box2d) -> f64 {
        let w = (self.x2.min(o.x2) - self.x1.max(o.x1)).max(0.0);
        let h = (self.y2.min(o.y2) - self.y1.max(o.y1)).max(0.0);
        w * h
    }

    /// Intersection over union; 0 when both boxes are empty.
    pub fn iou(&self, o: &Box2d) -> f64 {
        let inter = self.intersection(o);
        let union = self.area() + o.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn clip(&self, width: f64, height: f64) -> Box2d {
        Box2d::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }
}

/// A 2D detection lifted to 3D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub box2d: Box2d,
    /// Geometric center of the 3D box (m).
    #[serde(rename = "center3d")]
    pub center: Vector3<f64>,
    /// `[w, h, l]` (m).
    pub dims: [f64; 3],
    pub yaw: f64,
    pub alpha: f64,
    #[serde(default = "one")]
    pub score: f64,
    pub category: String,
}

fn one() -> f64 {
    1.0
}

impl DetectionBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.center.z > 0.0) {
            return Err(Error::invalid(format!(
                "box depth must be positive, got {}",
                self.center.z
            )));
        }
        if self.dims.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid(format!(
                "box dims must be positive, got {:?}",
                self.dims
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid(format!(
                "score must lie in [0, 1], got {}",
                self.score
            )));
        }
        Ok(())
    }

    /// Set α and keep yaw consistent with the box center.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = wrap_angle(alpha);
        self.yaw = yaw_from_obs(self.alpha, self.center.x, self.center.z);
        self
    }
}

/// Wrap an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Observation angle `α = θ − atan(x/z)`.
pub fn obs_angle(x: f64, z: f64, yaw: f64) -> f64 {
    wrap_angle(yaw - x.atan2(z))
}

pub fn yaw_from_obs(alpha: f64, x: f64, z: f64) -> f64 {
    wrap_angle(alpha + x.atan2(z))
}

/// `(sin α, cos α)` encoding of an angle.
pub fn encode_alpha(alpha: f64) -> [f64; 2] {
    [alpha.sin(), alpha.cos()]
}

/// Inverse of [`encode_alpha`]; the pair need not be unit length.
pub fn decode_alpha(enc: [f64; 2]) -> f64 {
    wrap_angle(enc[0].atan2(enc[1]))
}

/// `(sin 2α, cos 2α)` encoding. It is blind to `α ↦ α + π`, so the facing bit
/// of [`facing_front`] has to travel with it.
pub fn encode_alpha2(alpha: f64) -> [f64; 2] {
    [(2.0 * alpha).sin(), (2.0 * alpha).cos()]
}

/// Whether the object faces the camera half-space, `cos α ≥ 0`.
pub fn facing_front(alpha: f64) -> bool {
    alpha.cos() >= 0.0
}

/// Inverse of [`encode_alpha2`] given the facing bit.
pub fn decode_alpha2(enc: [f64; 2], front: bool) -> f64 {
    let half = enc[0].atan2(enc[1]) / 2.0;
    if front {
        half
    } else {
        wrap_angle(half + std::f64::consts::PI)
    }
}

/// Mean and population variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, var })
    }
}

/// Statistics of the labels matched to one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrior {
    pub count: usize,
    pub z: Moments,
    pub sin_alpha: Moments,
    pub cos_alpha: Moments,
    pub sin_2alpha: Moments,
    pub cos_2alpha: Moments,
    /// Per-dimension `[w, h, l]`.
    pub dims: [Moments; 3],
}

impl AnchorPrior {
    fn from_labels(labels: &[&DetectionBox]) -> Option<Self> {
        let col = |f: &dyn Fn(&DetectionBox) -> f64| -> Vec<f64> {
            labels.iter().map(|l| f(l)).collect()
        };
        Some(Self {
            count: labels.len(),
            z: Moments::of(&col(&|l| l.center.z))?,
            sin_alpha: Moments::of(&col(&|l| l.alpha.sin()))?,
            cos_alpha: Moments::of(&col(&|l| l.alpha.cos()))?,
            sin_2alpha: Moments::of(&col(&|l| (2.0 * l.alpha).sin()))?,
            cos_2alpha: Moments::of(&col(&|l| (2.0 * l.alpha).cos()))?,
            dims: [
                Moments::of(&col(&|l| l.dims[0]))?,
                Moments::of(&col(&|l| l.dims[1]))?,
                Moments::of(&col(&|l| l.dims[2]))?,
            ],
        })
    }
}

/// A positioned 2D anchor with its 3D priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub box2d: Box2d,
    /// Statistics over all matched labels; `None` flags an anchor without matches.
    pub pooled: Option<AnchorPrior>,
    /// Statistics per label category.
    #[serde(default)]
    pub per_category: BTreeMap<String, AnchorPrior>,
}

impl AnchorSpec {
    pub fn new(box2d: Box2d) -> Result<Self> {
        if !box2d.is_valid() {
            return Err(Error::invalid(format!("anchor box {box2d:?} has no area")));
        }
        Ok(Self {
            box2d,
            pooled: None,
            per_category: BTreeMap::new(),
        })
    }

    pub fn prior(&self, category: Option<&str>) -> Option<&AnchorPrior> {
        match category {
            Some(c) => self.per_category.get(c),
            None => self.pooled.as_ref(),
        }
    }
}

pub const DEFAULT_STATS_IOU: f64 = 0.5;
pub const DEFAULT_GROUND_TOL: f64 = 1.0;

/// Anchors of each `(w, h)` shape centered on a `stride` grid.
pub fn generate_anchors(
    width: usize,
    height: usize,
    stride: usize,
    shapes: &[(f64, f64)],
) -> Result<Vec<AnchorSpec>> {
    if stride == 0 {
        return Err(Error::invalid("anchor stride must be positive"));
    }
    let mut out = Vec::new();
    for y in (0..height).step_by(stride) {
        for x in (0..width).step_by(stride) {
            let (cx, cy) = (
                x as f64 + stride as f64 / 2.0,
                y as f64 + stride as f64 / 2.0,
            );
            for &(w, h) in shapes {
                out.push(AnchorSpec::new(Box2d::from_center(cx, cy, w, h))?);
            }
        }
    }
    Ok(out)
}

/// Fill each anchor with the statistics of the labels overlapping it by at
/// least `iou_thresh`.
pub fn collect_anchor_stats(
    anchors: &[AnchorSpec],
    labels: &[DetectionBox],
    iou_thresh: f64,
) -> Result<Vec<AnchorSpec>> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::invalid(format!(
            "IoU threshold must lie in (0, 1), got {iou_thresh}"
        )));
    }
    Ok(anchors
        .par_iter()
        .map(|a| {
            let matched: Vec<&DetectionBox> = labels
                .iter()
                .filter(|l| a.box2d.iou(&l.box2d) >= iou_thresh)
                .collect();
            let mut by_cat: BTreeMap<&str, Vec<&DetectionBox>> = BTreeMap::new();
            for l in &matched {
                by_cat.entry(l.category.as_str()).or_default().push(l);
            }
            AnchorSpec {
                box2d: a.box2d,
                pooled: AnchorPrior::from_labels(&matched),
                per_category: by_cat
                    .into_iter()
                    .filter_map(|(c, ls)| Some((c.to_string(), AnchorPrior::from_labels(&ls)?)))
                    .collect(),
            }
        })
        .collect())
}

/// Lift an anchor center at mean depth `z_hat` into camera coordinates.
pub fn backproject_anchor(cam: &Pinhole, u: f64, v: f64, z_hat: f64) -> Result<(f64, f64)> {
    if !(z_hat > 0.0) {
        return Err(Error::invalid(format!(
            "anchor depth must be positive, got {z_hat}"
        )));
    }
    Ok(((u - cam.cx) / cam.fx * z_hat, (v - cam.cy) / cam.fy * z_hat))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundFilter {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Dropped because no prior exists for the requested category.
    pub without_prior: Vec<usize>,
}

/// Keep anchors whose back-projected center lies within `tol` of the ground
/// plane `y = elevation`. With a category, that category's prior is used.
pub fn filter_ground(
    anchors: &[AnchorSpec],
    cam: &Pinhole,
    elevation: f64,
    tol: f64,
    category: Option<&str>,
) -> Result<GroundFilter> {
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!(
            "ground tolerance must be non-negative, got {tol}"
        )));
    }
    let mut out = GroundFilter::default();
    for (i, a) in anchors.iter().enumerate() {
        let Some(prior) = a.prior(category) else {
            out.without_prior.push(i);
            out.dropped.push(i);
            continue;
        };
        let c = a.box2d.center();
        let (_, y3d) = backproject_anchor(cam, c.x, c.y, prior.z.mean)?;
        if (y3d - elevation).abs() <= tol {
            out.kept.push(i);
        } else {
            out.dropped.push(i);
        }
    }
    Ok(out)
}

/// Rotation about the camera y axis.
pub fn roty(yaw: f64) -> nalgebra::Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    nalgebra::Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// The eight corners of a 3D box in camera coordinates.
pub fn box_corners(center: &Vector3<f64>, dims: [f64; 3], yaw: f64) -> [Vector3<f64>; 8] {
    let [w, h, l] = dims;
    let r = roty(yaw);
    let mut out = [Vector3::zeros(); 8];
    let mut i = 0;
    for sx in [-0.5, 0.5] {
        for sy in [-0.5, 0.5] {
            for sz in [-0.5, 0.5] {
                out[i] = center + r * Vector3::new(sx * l, sy * h, sz * w);
                i += 1;
            }
        }
    }
    out
}

/// Tight image-clipped 2D box around the projected 3D box.
pub fn project_box3d(cam: &Pinhole, b: &DetectionBox) -> Result<Box2d> {
    project_corners(cam, &b.center, b.dims, b.yaw)
}

fn project_corners(
    cam: &Pinhole,
    center: &Vector3<f64>,
    dims: [f64; 3],
    yaw: f64,
) -> Result<Box2d> {
    let mut hull = Box2d::new(
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in box_corners(center, dims, yaw) {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera(p.z));
        }
        let u = cam.fx * p.x / p.z + cam.cx;
        let v = cam.fy * p.y / p.z + cam.cy;
        hull.x1 = hull.x1.min(u);
        hull.y1 = hull.y1.min(v);
        hull.x2 = hull.x2.max(u);
        hull.y2 = hull.y2.max(v);
    }
    Ok(hull.clip(cam.width as f64, cam.height as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HillClimbMode {
    #[default]
    AlphaOnly,
    AlphaAndZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HillClimbConfig {
    pub mode: HillClimbMode,
    /// Initial α step (rad).
    pub alpha_step: f64,
    /// Initial z step as a fraction of the starting depth.
    pub z_step_frac: f64,
    /// Search stops once the α step would shrink below this.
    pub min_alpha_step: f64,
    pub max_iter: usize,
}

impl Default for HillClimbConfig {
    fn default() -> Self {
        Self {
            mode: HillClimbMode::AlphaOnly,
            alpha_step: 0.1,
            z_step_frac: 0.05,
            min_alpha_step: 1e-3,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HillClimbResult {
    pub refined: DetectionBox,
    pub iou: f64,
    /// Best IoU after each iteration, starting with the initial value.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Candidates rejected because a corner fell behind the camera.
    pub rejected: usize,
}

/// Moving the box along its viewing ray: center scaled by `z'/z`, so the
/// projected center and `α` stay fixed while yaw follows.
fn at_depth(b: &DetectionBox, z: f64) -> DetectionBox {
    let mut out = b.clone();
    out.center *= z / b.center.z;
    out.yaw = yaw_from_obs(out.alpha, out.center.x, out.center.z);
    out
}

/// Coordinate ascent on `IoU(project(box), target)` over α (and depth).
pub fn hillclimb_refine(
    cam: &Pinhole,
    start: &DetectionBox,
    target: &Box2d,
    cfg: &HillClimbConfig,
) -> Result<HillClimbResult> {
    if !target.is_valid() {
        return Err(Error::invalid(format!("target box {target:?} has no area")));
    }
    if !(cfg.alpha_step > 0.0 && cfg.min_alpha_step > 0.0 && cfg.z_step_frac >= 0.0) {
        return Err(Error::InvalidConfig(
            "hill-climb steps must be positive".into(),
        ));
    }
    start.validate()?;
    let mut best = start.clone().with_alpha(start.alpha);
    let mut best_iou = project_box3d(cam, &best)?.iou(target);
    let mut step_a = cfg.alpha_step;
    let mut step_z = cfg.z_step_frac * start.center.z;
    let mut trace = vec![best_iou];
    let mut rejected = 0;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut candidates = vec![
            best.clone().with_alpha(best.alpha + step_a),
            best.clone().with_alpha(best.alpha - step_a),
        ];
        if cfg.mode == HillClimbMode::AlphaAndZ && step_z > 0.0 {
            candidates.push(at_depth(&best, best.center.z + step_z));
            if best.center.z - step_z > 0.0 {
                candidates.push(at_depth(&best, best.center.z - step_z));
            }
        }
        let mut improved = false;
        for c in candidates {
            match project_box3d(cam, &c) {
                Ok(b) => {
                    let iou = b.iou(target);
                    if iou > best_iou {
                        best_iou = iou;
                        best = c;
                        improved = true;
                    }
                }
                Err(Error::BehindCamera(_)) => rejected += 1,
                Err(e) => return Err(e),
            }
        }
        trace.push(best_iou);
        if !improved {
            if step_a <= cfg.min_alpha_step {
                break;
            }
            step_a = (step_a / 2.0).max(cfg.min_alpha_step);
            step_z /= 2.0;
        }
    }
    best.box2d = project_box3d(cam, &best)?;
    Ok(HillClimbResult {
        refined: best,
        iou: best_iou,
        trace,
        iterations,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cam() -> Pinhole {
        Pinhole::new(700.0, 700.0, 640.0, 190.0, 1280, 380)
    }

    fn car(x: f64, z: f64, yaw: f64) -> DetectionBox {
        DetectionBox {
            box2d: Box2d::new(0.0, 0.0, 1.0, 1.0),
            center: Vector3::new(x, 1.0, z),
            dims: [1.6, 1.5, 4.0],
            yaw,
            alpha: obs_angle(x, z, yaw),
            score: 0.9,
            category: "Car".into(),
        }
    }

    #[test]
    fn iou_basics() {
        let a = Box2d::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_abs_diff_eq!(a.iou(&Box2d::new(1.0, 0.0, 3.0, 2.0)), 1.0 / 3.0);
        assert_eq!(a.iou(&Box2d::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        let empty = Box2d::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(empty.iou(&empty), 0.0);
    }

    #[test]
    fn angle_wrapping() {
        assert_abs_diff_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.5 + 4.0 * PI), 0.5, epsilon = 1e-12);
        assert_eq!(obs_angle(0.0, 10.0, 0.7), 0.7);
        let x: f64 = 3.0;
        assert_abs_diff_eq!(obs_angle(x, 12.0, (x / 12.0).atan()), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn backprojection_examples() {
        let c = cam();
        assert_eq!(
            backproject_anchor(&c, 640.0, 190.0, 20.0).unwrap(),
            (0.0, 0.0)
        );
        let (x, _) = backproject_anchor(&c, 710.0, 190.0, 20.0).unwrap();
        assert_abs_diff_eq!(x, 2.0, epsilon = 1e-12);
        let (x1, y1) = backproject_anchor(&c, 700.0, 250.0, 10.0).unwrap();
        let (x2, y2) = backproject_anchor(&c, 700.0, 250.0, 20.0).unwrap();
        assert_abs_diff_eq!(x2, 2.0 * x1, epsilon = 1e-12);
        assert_abs_diff_eq!(y2, 2.0 * y1, epsilon = 1e-12);
        assert!(backproject_anchor(&c, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn angle_encodings_round_trip() {
        for i in 0..360 {
            let a = wrap_angle(-3.1 + i as f64 * 0.0173);
            assert!((decode_alpha(encode_alpha(a)) - a).abs() < 1e-12);
            let scaled = encode_alpha(a).map(|v| 3.0 * v);
            assert!((decode_alpha(scaled) - a).abs() < 1e-12);
            let back = decode_alpha2(encode_alpha2(a), facing_front(a));
            assert!(wrap_angle(back - a).abs() < 1e-12, "{a} -> {back}");
            let mirrored = decode_alpha2(encode_alpha2(a), !facing_front(a));
            assert!((wrap_angle(mirrored - a).abs() - std::f64::consts::PI).abs() < 1e-12);
        }
    }

    fn label(box2d: Box2d, z: f64, alpha: f64, cat: &str) -> DetectionBox {
        DetectionBox {
            box2d,
            center: Vector3::new(0.0, 1.0, z),
            dims: [1.6, 1.5, 4.0],
            yaw: alpha,
            alpha,
            score: 1.0,
            category: cat.into(),
        }
    }

    #[test]
    fn stats_examples() {
        let a = AnchorSpec::new(Box2d::new(0.0, 0.0, 10.0, 10.0)).unwrap();
        let far = AnchorSpec::new(Box2d::new(100.0, 100.0, 110.0, 110.0)).unwrap();
        let labels = vec![
            label(Box2d::new(0.0, 0.0, 10.0, 9.0), 10.0, 0.0, "Car"),
            label(Box2d::new(1.0, 0.0, 10.0, 10.0), 20.0, PI / 2.0, "Car"),
        ];
        let out = collect_anchor_stats(&[a.clone(), far], &labels, 0.5).unwrap();
        let p = out[0].pooled.unwrap();
        assert_eq!(p.count, 2);
        assert_abs_diff_eq!(p.z.mean, 15.0);
        assert_abs_diff_eq!(p.z.var, 25.0);
        assert_abs_diff_eq!(p.sin_alpha.mean, 0.5, epsilon = 1e-12);
        assert!(out[1].pooled.is_none());
        assert!(out[0].per_category.contains_key("Car"));

        let single = collect_anchor_stats(&[a], &labels[..1], 0.5).unwrap();
        assert_eq!(
            single[0].pooled.unwrap().z,
            Moments {
                mean: 10.0,
                var: 0.0
            }
        );
        assert!(collect_anchor_stats(&[], &labels, 1.0).is_err());
    }

    fn anchor_with_z(v: f64, z: f64) -> AnchorSpec {
        let mut a = AnchorSpec::new(Box2d::from_center(640.0, v, 20.0, 20.0)).unwrap();
        let m = |mean| Moments { mean, var: 0.0 };
        a.pooled = Some(AnchorPrior {
            count: 1,
            z: m(z),
            sin_alpha: m(0.0),
            cos_alpha: m(1.0),
            sin_2alpha: m(0.0),
            cos_2alpha: m(1.0),
            dims: [m(1.6), m(1.5), m(4.0)],
        });
        a
    }

    #[test]
    fn ground_filter_examples() {
        let c = cam();
        // y3d = (v − cy)/fy·z
        let on_ground = anchor_with_z(190.0 + 1.65 * 700.0 / 20.0, 20.0);
        let above = anchor_with_z(190.0 - 3.35 * 700.0 / 20.0, 20.0);
        let flagged = AnchorSpec::new(Box2d::new(0.0, 0.0, 5.0, 5.0)).unwrap();
        let anchors = vec![on_ground, above, flagged];
        let f = filter_ground(&anchors, &c, 1.65, 1.0, None).unwrap();
        assert_eq!(f.kept, vec![0]);
        assert_eq!(f.dropped, vec![1, 2]);
        assert_eq!(f.without_prior, vec![2]);
        let all = filter_ground(&anchors[..2], &c, 1.65, f64::INFINITY, None).unwrap();
        assert_eq!(all.kept, vec![0, 1]);
        let cat = filter_ground(&anchors[..2], &c, 1.65, f64::INFINITY, Some("Car")).unwrap();
        assert!(cat.kept.is_empty());
    }

    #[test]
    fn projected_box_geometry() {
        let c = cam();
        let mut b = car(0.0, 10.0, 0.0);
        b.center.y = 0.0;
        let p = project_box3d(&c, &b).unwrap();
        assert_abs_diff_eq!(p.center(), Vector2::new(640.0, 190.0), epsilon = 1e-9);
        let mut moved = b.clone();
        moved.center.x += 1.0;
        assert!(project_box3d(&c, &moved).unwrap().x1 > p.x1);

        // corner-enumeration oracle for z = 10, w = 1.6, h = 1.5, l = 4
        let (hl, hh, hw) = (2.0, 0.75, 0.8);
        let near = 10.0 - hw;
        let expected = Box2d::new(
            640.0 - 700.0 * hl / near,
            190.0 - 700.0 * hh / near,
            640.0 + 700.0 * hl / near,
            190.0 + 700.0 * hh / near,
        );
        assert_abs_diff_eq!(p.x1, expected.x1, epsilon = 1e-9);
        assert_abs_diff_eq!(p.y2, expected.y2, epsilon = 1e-9);
    }

    #[test]
    fn behind_camera_rejected() {
        let b = car(0.0, 0.5, 0.0);
        assert!(matches!(
            project_box3d(&cam(), &b),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn hillclimb_keeps_optimum() {
        let c = cam();
        let truth = car(-2.0, 15.0, 0.6);
        let target = project_box3d(&c, &truth).unwrap();
        let r = hillclimb_refine(&c, &truth, &target, &HillClimbConfig::default()).unwrap();
        assert_abs_diff_eq!(r.refined.alpha, truth.alpha, epsilon = 1e-12);
        assert_abs_diff_eq!(r.iou, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hillclimb_recovers_depth() {
        let c = cam();
        let truth = car(3.0, 20.0, 0.9);
        let target = project_box3d(&c, &truth).unwrap();
        let start = at_depth(&truth, 22.0).with_alpha(truth.alpha + 0.05);
        let cfg = HillClimbConfig {
            mode: HillClimbMode::AlphaAndZ,
            ..Default::default()
        };
        let r = hillclimb_refine(&c, &start, &target, &cfg).unwrap();
        assert!((r.refined.center.z - 20.0).abs() / 20.0 < 0.02);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(r.iterations <= 100);
    }
}
