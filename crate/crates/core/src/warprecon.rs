//! Dense images and depth maps, depth-based view warping, photometric
//! reconstruction error and the supervised depth losses.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camgeo::{CameraModel, DepthKind, RigidPose};
use crate::epiflow::FlowField;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// SSIM stabilization constants on the `[0, 1]` intensity range.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Sample coordinates closer than this to an integer are snapped onto it.
const SNAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Lab,
    Gray,
}

/// Interleaved `H × W × C` image. RGB and gray values live in `[0, 1]`;
/// LAB keeps its natural ranges (`L ∈ [0, 100]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    space: ColorSpace,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, space: ColorSpace, data: Vec<f32>) -> Result<Self> {
        let channels = match space {
            ColorSpace::Gray => 1,
            ColorSpace::Rgb | ColorSpace::Lab => 3,
        };
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{}x{} image",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image values must be finite"));
        }
        Ok(Self {
            width,
            height,
            channels,
            space,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        space: ColorSpace,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let channels = if space == ColorSpace::Gray { 1 } else { 3 };
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            space,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Bilinear sample at a sub-pixel location into `out`; `false` if any
    /// contributing tap falls outside the image.
    pub fn sample(&self, u: f64, v: f64, out: &mut [f32]) -> bool {
        let Some(taps) = bilinear_taps(u, v, self.width, self.height) else {
            return false;
        };
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let mut acc = 0.0f64;
            for &(x, y, w) in &taps {
                if w != 0.0 {
                    acc += w * self.get(x, y, c) as f64;
                }
            }
            *o = acc as f32;
        }
        true
    }

    /// Convert sRGB (gamma-encoded, D65) to CIE LAB.
    pub fn to_lab(&self) -> Result<Image> {
        match self.space {
            ColorSpace::Lab => Ok(self.clone()),
            ColorSpace::Gray => {
                let data = self
                    .data
                    .iter()
                    .flat_map(|&g| srgb_to_lab([g, g, g]))
                    .collect();
                Image::new(self.width, self.height, ColorSpace::Lab, data)
            }
            ColorSpace::Rgb => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .flat_map(|p| srgb_to_lab([p[0], p[1], p[2]]))
                    .collect();
                Image::new(self.width, self.height, ColorSpace::Lab, data)
            }
        }
    }
}

/// sRGB (`[0,1]`, gamma encoded) to CIE LAB under D65.
pub fn srgb_to_lab(rgb: [f32; 3]) -> [f32; 3] {
    fn linear(c: f32) -> f64 {
        let c = c as f64;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        const D: f64 = 6.0 / 29.0;
        if t > D * D * D {
            t.cbrt()
        } else {
            t / (3.0 * D * D) + 4.0 / 29.0
        }
    }
    let (r, g, b) = (linear(rgb[0]), linear(rgb[1]), linear(rgb[2]));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
    [
        (116.0 * fy - 16.0) as f32,
        (500.0 * (fx - fy)) as f32,
        (200.0 * (fy - fz)) as f32,
    ]
}

/// Bilinear taps `(x, y, weight)` for a sample point, border-invalid.
pub(crate) fn bilinear_taps(
    u: f64,
    v: f64,
    w: usize,
    h: usize,
) -> Option<[(usize, usize, f64); 4]> {
    let snap = |t: f64| {
        let r = t.round();
        if (t - r).abs() < SNAP_EPS {
            r
        } else {
            t
        }
    };
    let (u, v) = (snap(u), snap(v));
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let x0 = (u.floor() as usize).min(w - 1);
    let y0 = (v.floor() as usize).min(h - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    Some([
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ])
}

/// Metric depth with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
    kind: DepthKind,
}

impl DepthMap {
    /// Build from raw values; entries that are not positive and finite are invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} depth values for a {}x{} map",
                values.len(),
                width,
                height
            )));
        }
        let valid = values.iter().map(|&d| d > 0.0 && d.is_finite()).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
            kind: DepthKind::ZDepth,
        })
    }

    /// Build a fully valid map; fails on any non-positive entry.
    pub fn dense(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let map = Self::from_values(width, height, values)?;
        if let Some(i) = map.valid.iter().position(|v| !v) {
            return Err(Error::invalid(format!(
                "dense depth has invalid value {} at index {i}",
                map.values[i]
            )));
        }
        Ok(map)
    }

    pub fn from_options(width: usize, height: usize, values: &[Option<f64>]) -> Result<Self> {
        let raw = values.iter().map(|v| v.unwrap_or(0.0)).collect();
        Self::from_values(width, height, raw)
    }

    pub fn with_kind(mut self, kind: DepthKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn kind(&self) -> DepthKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.get_index(y * self.width + x)
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> Option<f64> {
        self.valid[i].then(|| self.values[i])
    }

    pub fn set(&mut self, x: usize, y: usize, depth: Option<f64>) {
        let i = y * self.width + x;
        self.set_index(i, depth);
    }

    pub fn set_index(&mut self, i: usize, depth: Option<f64>) {
        match depth {
            Some(d) if d > 0.0 && d.is_finite() => {
                self.values[i] = d;
                self.valid[i] = true;
            }
            _ => {
                self.values[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    /// Raw values; invalid entries hold `0.0` or whatever was supplied.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.values.len()).map(|i| self.get_index(i))
    }

    pub fn same_shape(&self, other: &DepthMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map_valid(&self, mut f: impl FnMut(usize, f64) -> f64) -> DepthMap {
        let mut out = self.clone();
        for i in 0..out.values.len() {
            if let Some(d) = self.get_index(i) {
                out.set_index(i, Some(f(i, d)));
            }
        }
        out
    }
}

/// Target-frame reconstruction together with its validity mask.
#[derive(Debug, Clone)]
pub struct Warped {
    pub image: Image,
    pub valid: Grid<bool>,
}

fn check_depth_camera(depth: &DepthMap, cam: &CameraModel) -> Result<()> {
    if depth.width() != cam.width() || depth.height() != cam.height() {
        return Err(Error::ShapeMismatch(format!(
            "depth is {}x{} but the target camera is {}x{}",
            depth.width(),
            depth.height(),
            cam.width(),
            cam.height()
        )));
    }
    Ok(())
}

/// Where each target pixel lands in the source camera, if anywhere.
fn reproject(
    depth: &DepthMap,
    cam_t: &CameraModel,
    cam_s: &CameraModel,
    pose_t_to_s: &RigidPose,
) -> Result<Vec<Option<Vector2<f64>>>> {
    check_depth_camera(depth, cam_t)?;
    let w = depth.width();
    (0..depth.len())
        .into_par_iter()
        .map(|i| {
            let Some(d) = depth.get_index(i) else {
                return Ok(None);
            };
            let px = Vector2::new((i % w) as f64, (i / w) as f64);
            let p: Vector3<f64> = match cam_t.unproject(px, d, depth.kind()) {
                Ok(p) => p,
                // pixels outside the model's domain carry no geometry
                Err(Error::InvalidArgument(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let q = pose_t_to_s.transform(&p);
            cam_s.project_unbounded(&q)
        })
        .collect()
}

/// Reconstruct the target frame by sampling `src` at the reprojection of
/// each target pixel.
pub fn warp(
    src: &Image,
    depth: &DepthMap,
    cam_t: &CameraModel,
    cam_s: &CameraModel,
    pose_t_to_s: &RigidPose,
) -> Result<Warped> {
    if src.width() != cam_s.width() || src.height() != cam_s.height() {
        return Err(Error::ShapeMismatch(
            "source image does not match the source camera".into(),
        ));
    }
    let targets = reproject(depth, cam_t, cam_s, pose_t_to_s)?;
    Ok(sample_at(src, depth.width(), depth.height(), &targets))
}

fn sample_at(src: &Image, width: usize, height: usize, targets: &[Option<Vector2<f64>>]) -> Warped {
    let c = src.channels();
    let mut data = vec![0.0f32; width * height * c];
    let mut valid = vec![false; width * height];
    data.par_chunks_mut(c)
        .zip(valid.par_iter_mut())
        .zip(targets.par_iter())
        .for_each(|((out, ok), target)| {
            if let Some(p) = target {
                *ok = src.sample(p.x, p.y, out);
                if !*ok {
                    out.fill(0.0);
                }
            }
        });
    Warped {
        image: Image {
            width,
            height,
            channels: c,
            space: src.space(),
            data,
        },
        valid: Grid::from_vec(width, height, valid).expect("sized above"),
    }
}

/// Sample `src` at `pixel + flow` for every pixel with valid flow.
pub fn warp_with_flow(src: &Image, flow: &FlowField) -> Result<Warped> {
    let (w, h) = (flow.width(), flow.height());
    if src.width() != w || src.height() != h {
        return Err(Error::ShapeMismatch("flow and image sizes differ".into()));
    }
    let targets: Vec<_> = (0..w * h)
        .map(|i| {
            flow.vectors.as_slice()[i].map(|f| Vector2::new((i % w) as f64, (i / w) as f64) + f)
        })
        .collect();
    Ok(sample_at(src, w, h, &targets))
}

/// Rigid (static-scene) optical flow induced by depth and relative pose.
pub fn synth_static_flow(
    depth: &DepthMap,
    cam_t: &CameraModel,
    cam_s: &CameraModel,
    pose_t_to_s: &RigidPose,
) -> Result<FlowField> {
    let targets = reproject(depth, cam_t, cam_s, pose_t_to_s)?;
    let w = depth.width();
    let vectors = targets
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.map(|p| p - Vector2::new((i % w) as f64, (i / w) as f64)))
        .collect();
    Ok(FlowField {
        vectors: Grid::from_vec(w, depth.height(), vectors)?,
    })
}

#[derive(Debug, Clone)]
pub struct PhotoLoss {
    /// Per-pixel loss; pixels outside the mask hold `0`.
    pub map: Grid<f64>,
    /// Mean over the masked pixels.
    pub mean: f64,
    pub count: usize,
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Per-pixel SSIM over a 3×3 window with reflection padding, averaged over channels.
pub fn ssim_map(a: &Image, b: &Image) -> Result<Grid<f64>> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let (w, h, ch) = (a.width, a.height, a.channels);
    let values: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let mut total = 0.0;
            for c in 0..ch {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let xx = reflect(x + dx, w);
                        let yy = reflect(y + dy, h);
                        let va = a.get(xx, yy, c) as f64;
                        let vb = b.get(xx, yy, c) as f64;
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                let (mu_a, mu_b) = (sa / 9.0, sb / 9.0);
                let var_a = saa / 9.0 - mu_a * mu_a;
                let var_b = sbb / 9.0 - mu_b * mu_b;
                let cov = sab / 9.0 - mu_a * mu_b;
                let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
                total += num / den;
            }
            total / ch as f64
        })
        .collect();
    Grid::from_vec(w, h, values)
}

/// `alpha·(1 − SSIM)/2 + beta·|a − b|` per pixel, averaged over the mask.
pub fn photometric_loss(
    a: &Image,
    b: &Image,
    alpha: f64,
    beta: f64,
    mask: Option<&Grid<bool>>,
) -> Result<PhotoLoss> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    if let Some(m) = mask {
        if m.width() != a.width || m.height() != a.height {
            return Err(Error::ShapeMismatch("mask size differs from images".into()));
        }
    }
    let (w, h, ch) = (a.width, a.height, a.channels);
    let mut ssim = ssim_map(a, b)?;
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..w * h {
        let keep = mask.is_none_or(|m| m.as_slice()[i]);
        let s = &mut ssim.as_mut_slice()[i];
        if !keep {
            *s = 0.0;
            continue;
        }
        let l1: f64 = (0..ch)
            .map(|c| (a.data[i * ch + c] as f64 - b.data[i * ch + c] as f64).abs())
            .sum::<f64>()
            / ch as f64;
        let structural = ((1.0 - *s) / 2.0).clamp(0.0, 1.0);
        *s = alpha * structural + beta * l1;
        sum += *s;
        count += 1;
    }
    let mean = if count > 0 { sum / count as f64 } else { 0.0 };
    Ok(PhotoLoss {
        map: ssim,
        mean,
        count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiLosses {
    pub si: f64,
    pub smooth: f64,
    /// `si + alpha_smooth · smooth`
    pub total: f64,
}

/// Scale-invariant log loss over pixels valid in both maps:
/// `mean(d²) − λ·mean(d)²`, `d = log pred − log gt`.
pub fn scale_invariant_loss(pred: &DepthMap, gt: &DepthMap, lambda: f64) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch(
            "prediction and target sizes differ".into(),
        ));
    }
    let mut n = 0usize;
    let (mut s1, mut s2) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt.iter()) {
        if let (Some(p), Some(g)) = (p, g) {
            let d = p.ln() - g.ln();
            s1 += d;
            s2 += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    let n = n as f64;
    Ok(s2 / n - lambda * (s1 / n) * (s1 / n))
}

/// Edge-aware first-order smoothness `Σ |∂z|·exp(−|∂I|) / N` at one scale.
pub fn edge_aware_smoothness(depth: &DepthMap, image: &Image) -> Result<f64> {
    if depth.width() != image.width() || depth.height() != image.height() {
        return Err(Error::ShapeMismatch("depth and image sizes differ".into()));
    }
    let (w, h, ch) = (depth.width(), depth.height(), image.channels());
    let grad_i = |x0: usize, y0: usize, x1: usize, y1: usize| {
        (0..ch)
            .map(|c| (image.get(x1, y1, c) as f64 - image.get(x0, y0, c) as f64).abs())
            .sum::<f64>()
            / ch as f64
    };
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let Some(z) = depth.get(x, y) else { continue };
            if x + 1 < w {
                if let Some(zr) = depth.get(x + 1, y) {
                    sum += (zr - z).abs() * (-grad_i(x, y, x + 1, y)).exp();
                }
            }
            if y + 1 < h {
                if let Some(zd) = depth.get(x, y + 1) {
                    sum += (zd - z).abs() * (-grad_i(x, y, x, y + 1)).exp();
                }
            }
        }
    }
    Ok(sum / (w * h) as f64)
}

pub fn si_losses(
    pred: &DepthMap,
    gt: &DepthMap,
    image: &Image,
    lambda: f64,
    alpha_smooth: f64,
) -> Result<SiLosses> {
    let si = scale_invariant_loss(pred, gt, lambda)?;
    let smooth = edge_aware_smoothness(pred, image)?;
    Ok(SiLosses {
        si,
        smooth,
        total: si + alpha_smooth * smooth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camgeo::Pinhole;
    use approx::assert_abs_diff_eq;

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, ColorSpace::Rgb, |x, y, c| {
            let t = ((x as f32 * 0.7 + c as f32).sin() * (y as f32 * 0.45).cos()) * 0.4 + 0.5;
            t.clamp(0.0, 1.0)
        })
    }

    fn cam(w: usize, h: usize) -> CameraModel {
        CameraModel::Pinhole(Pinhole::new(
            100.0,
            100.0,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
        ))
    }

    #[test]
    fn identity_warp_is_exact() {
        let (w, h) = (40, 30);
        let img = textured(w, h);
        let depth = DepthMap::dense(w, h, vec![7.0; w * h]).unwrap();
        let c = cam(w, h);
        let out = warp(&img, &depth, &c, &c, &RigidPose::identity()).unwrap();
        assert!(out.valid.as_slice().iter().all(|v| *v));
        assert_eq!(out.image, img);
    }

    #[test]
    fn translation_shifts_by_disparity() {
        let (w, h) = (64, 16);
        let img = textured(w, h);
        let depth = DepthMap::dense(w, h, vec![10.0; w * h]).unwrap();
        let c = cam(w, h);
        // source camera sits 0.5 m to the right; points move left by f·B/z = 5 px
        let pose = RigidPose::from_translation(Vector3::new(-0.5, 0.0, 0.0));
        let flow = synth_static_flow(&depth, &c, &c, &pose).unwrap();
        let f = flow.vectors.get(20, 5).unwrap();
        assert_abs_diff_eq!(f.x, -5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.y, 0.0, epsilon = 1e-12);
        let out = warp(&img, &depth, &c, &c, &pose).unwrap();
        assert!(!out.valid.get(2, 5));
        assert!(*out.valid.get(5, 5));
        assert_eq!(out.image.pixel(20, 5), img.pixel(15, 5));

        let far = DepthMap::dense(w, h, vec![20.0; w * h]).unwrap();
        let flow = synth_static_flow(&far, &c, &c, &pose).unwrap();
        assert_abs_diff_eq!(flow.vectors.get(20, 5).unwrap().x, -2.5, epsilon = 1e-12);
    }

    #[test]
    fn identity_flow_is_zero() {
        let depth = DepthMap::dense(8, 6, vec![3.0; 48]).unwrap();
        let c = cam(8, 6);
        let flow = synth_static_flow(&depth, &c, &c, &RigidPose::identity()).unwrap();
        for f in flow.vectors.as_slice() {
            assert!(f.unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn photometric_equal_images_zero() {
        let img = textured(20, 20);
        let l = photometric_loss(&img, &img, 0.85, 0.15, None).unwrap();
        assert_eq!(l.mean, 0.0);
    }

    #[test]
    fn photometric_constant_images() {
        let a = Image::from_fn(5, 5, ColorSpace::Gray, |_, _, _| 0.2);
        let b = Image::from_fn(5, 5, ColorSpace::Gray, |_, _, _| 0.4);
        let l = photometric_loss(&a, &b, 0.85, 0.15, None).unwrap();
        // hand evaluation in f64 of the f32 inputs
        let (ma, mb) = (0.2f32 as f64, 0.4f32 as f64);
        let ssim = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        let expected = 0.85 * (1.0 - ssim) / 2.0 + 0.15 * (mb - ma);
        assert_abs_diff_eq!(l.mean, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(0.15 * (mb - ma), 0.03, epsilon = 1e-7);
    }

    #[test]
    fn photometric_shape_mismatch() {
        let a = textured(4, 4);
        let b = textured(5, 4);
        assert!(matches!(
            photometric_loss(&a, &b, 0.85, 0.15, None),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn si_loss_examples() {
        let gt = DepthMap::from_values(4, 1, vec![1.0, 2.0, 0.0, 8.0]).unwrap();
        let img = Image::from_fn(4, 1, ColorSpace::Gray, |_, _, _| 0.5);
        let l = si_losses(&gt, &gt, &img, 0.3, 0.3).unwrap();
        assert_eq!(l.si, 0.0);
        let scaled = DepthMap::dense(4, 1, vec![3.0, 6.0, 9.0, 24.0]).unwrap();
        assert_abs_diff_eq!(
            scale_invariant_loss(&scaled, &gt, 1.0).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let flat = DepthMap::dense(4, 1, vec![5.0; 4]).unwrap();
        assert_eq!(edge_aware_smoothness(&flat, &img).unwrap(), 0.0);
        let empty = DepthMap::from_values(4, 1, vec![0.0; 4]).unwrap();
        assert!(matches!(
            scale_invariant_loss(&flat, &empty, 0.3),
            Err(Error::EmptyOverlap)
        ));
    }

    #[test]
    fn smoothness_down_weights_image_edges() {
        let depth = DepthMap::dense(2, 1, vec![1.0, 2.0]).unwrap();
        let flat = Image::from_fn(2, 1, ColorSpace::Gray, |_, _, _| 0.5);
        let edge = Image::from_fn(2, 1, ColorSpace::Gray, |x, _, _| x as f32);
        let s_flat = edge_aware_smoothness(&depth, &flat).unwrap();
        let s_edge = edge_aware_smoothness(&depth, &edge).unwrap();
        assert_abs_diff_eq!(s_flat, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s_edge, 0.5 * (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn lab_of_white_and_black() {
        let white = srgb_to_lab([1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(white[0], 100.0, epsilon = 1e-3);
        assert_abs_diff_eq!(white[1], 0.0, epsilon = 1e-2);
        assert_abs_diff_eq!(white[2], 0.0, epsilon = 1e-2);
        let black = srgb_to_lab([0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(black[0], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn bilinear_border_invalid() {
        assert!(bilinear_taps(-0.1, 0.0, 4, 4).is_none());
        assert!(bilinear_taps(3.0, 3.0, 4, 4).is_some());
        assert!(bilinear_taps(3.0 + 1e-6, 3.0, 4, 4).is_none());
    }
}
