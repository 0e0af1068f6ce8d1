//! Ground-plane depth priors.
//!
//! A pixel on row `v` below the horizon is assumed to see the ground plane,
//! which lies `elevation` meters below the camera. Its depth is
//! `z = (fy·EL + Ty) / (v − cy)`. Because `z` is singular on the horizon the
//! prior is also offered as the disparity of a virtual stereo rig with baseline
//! `B`, `d = max(0, fy·B·(v − cy) / (fy·EL + Ty))`, which is continuous over
//! the whole image.

use serde::{Deserialize, Serialize};

use crate::camgeo::{CameraModel, Pinhole};
use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundConfig {
    /// Camera height above the ground plane (m).
    pub elevation: f64,
    /// Vertical translation term of the calibration (m·px).
    pub ty: f64,
    /// Virtual stereo baseline (m).
    pub baseline: f64,
    /// Nominal foreground object height (m). The default is a placeholder
    /// for the dataset average and should be set per dataset.
    pub object_height: f64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        Self {
            elevation: 1.65,
            ty: 0.0,
            baseline: 0.54,
            object_height: 1.53,
        }
    }
}

impl GroundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.elevation > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "camera elevation must be positive, got {}",
                self.elevation
            )));
        }
        if !(self.baseline > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "virtual baseline must be positive, got {}",
                self.baseline
            )));
        }
        if !(self.object_height > 0.0 && self.object_height < 2.0 * self.elevation) {
            return Err(Error::InvalidConfig(format!(
                "object height must lie in (0, 2·elevation) = (0, {}), got {}",
                2.0 * self.elevation,
                self.object_height
            )));
        }
        Ok(())
    }

    /// `fy·EL + Ty`, required to be positive.
    fn numerator(&self, cam: &Pinhole) -> Result<f64> {
        let n = cam.fy * self.elevation + self.ty;
        if n > 0.0 {
            Ok(n)
        } else {
            Err(Error::InvalidConfig(format!(
                "fy·EL + Ty must be positive, got {n}"
            )))
        }
    }
}

/// Prior depth of a ground pixel on row `v`; `None` at or above the horizon.
pub fn ground_depth(cam: &CameraModel, cfg: &GroundConfig, v: f64) -> Result<Option<f64>> {
    let cam = cam.as_pinhole()?;
    let num = cfg.numerator(cam)?;
    let dv = v - cam.cy;
    Ok((dv > 0.0).then(|| num / dv))
}

/// Virtual-stereo disparity of a ground pixel on row `v`, clamped at zero.
pub fn virtual_disparity(cam: &CameraModel, cfg: &GroundConfig, v: f64) -> Result<f64> {
    let cam = cam.as_pinhole()?;
    let num = cfg.numerator(cam)?;
    Ok((cam.fy * cfg.baseline * (v - cam.cy) / num).max(0.0))
}

/// Geometric part of the vertical offset from an object center on row `v`
/// to its ground contact point: `ĥ / (2·EL − ĥ) · (v − cy)`.
pub fn vertical_offset(cfg: &GroundConfig, cam: &CameraModel, v: f64) -> Result<f64> {
    let cam = cam.as_pinhole()?;
    let denom = 2.0 * cfg.elevation - cfg.object_height;
    if !(denom > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "2·EL − ĥ must be positive, got {denom}"
        )));
    }
    Ok(cfg.object_height / denom * (v - cam.cy))
}

/// Dense per-pixel ground prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMap {
    /// Prior depth (m); `None` at and above the horizon row.
    pub depth: Grid<Option<f64>>,
    /// Virtual disparity (px), zero above the horizon.
    pub disparity: Grid<f64>,
    /// Geometric vertical offset (px) per pixel.
    pub offset: Grid<f64>,
}

/// Evaluate the ground prior at every pixel; rows are sampled at integer `v`.
pub fn prior_map(cam: &CameraModel, cfg: &GroundConfig) -> Result<PriorMap> {
    cfg.validate()?;
    let (w, h) = (cam.width(), cam.height());
    let mut depth_rows = Vec::with_capacity(h);
    let mut disp_rows = Vec::with_capacity(h);
    let mut off_rows = Vec::with_capacity(h);
    for y in 0..h {
        let v = y as f64;
        depth_rows.push(ground_depth(cam, cfg, v)?);
        disp_rows.push(virtual_disparity(cam, cfg, v)?);
        off_rows.push(vertical_offset(cfg, cam, v)?);
    }
    Ok(PriorMap {
        depth: Grid::from_fn(w, h, |_, y| depth_rows[y]),
        disparity: Grid::from_fn(w, h, |_, y| disp_rows[y]),
        offset: Grid::from_fn(w, h, |_, y| off_rows[y]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camgeo::MeiCamera;
    use approx::assert_abs_diff_eq;

    fn cam() -> CameraModel {
        CameraModel::Pinhole(Pinhole::new(700.0, 700.0, 600.0, 180.0, 1242, 375))
    }

    #[test]
    fn worked_example_depth() {
        let z = ground_depth(&cam(), &GroundConfig::default(), 250.0)
            .unwrap()
            .unwrap();
        assert_abs_diff_eq!(z, 16.5, epsilon = 1e-12);
    }

    #[test]
    fn horizon_and_above_are_invalid() {
        let cfg = GroundConfig::default();
        assert_eq!(ground_depth(&cam(), &cfg, 180.0).unwrap(), None);
        assert_eq!(ground_depth(&cam(), &cfg, 10.0).unwrap(), None);
        assert_eq!(virtual_disparity(&cam(), &cfg, 10.0).unwrap(), 0.0);
        assert_eq!(virtual_disparity(&cam(), &cfg, 180.0).unwrap(), 0.0);
    }

    #[test]
    fn worked_example_disparity() {
        let d = virtual_disparity(&cam(), &GroundConfig::default(), 250.0).unwrap();
        assert_abs_diff_eq!(d, 26460.0 / 1155.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d, 22.909, epsilon = 1e-3);
    }

    #[test]
    fn worked_example_offset() {
        let cfg = GroundConfig {
            object_height: 1.1,
            ..Default::default()
        };
        assert_abs_diff_eq!(
            vertical_offset(&cfg, &cam(), 220.0).unwrap(),
            20.0,
            epsilon = 1e-12
        );
        assert_eq!(vertical_offset(&cfg, &cam(), 180.0).unwrap(), 0.0);
        let tiny = GroundConfig {
            object_height: 1e-12,
            ..Default::default()
        };
        assert!(vertical_offset(&tiny, &cam(), 370.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn non_pinhole_rejected() {
        let mei = CameraModel::Mei(MeiCamera {
            gamma_x: 1.0,
            gamma_y: 1.0,
            u0: 0.0,
            v0: 0.0,
            xi: 1.0,
            k1: 0.0,
            k2: 0.0,
            width: 4,
            height: 4,
        });
        assert!(matches!(
            ground_depth(&mei, &GroundConfig::default(), 3.0),
            Err(Error::UnsupportedModel { .. })
        ));
    }

    #[test]
    fn non_positive_numerator_rejected() {
        let cfg = GroundConfig {
            ty: -700.0 * 1.65,
            ..Default::default()
        };
        assert!(matches!(
            virtual_disparity(&cam(), &cfg, 250.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn config_invariants() {
        assert!(GroundConfig::default().validate().is_ok());
        let bad = GroundConfig {
            object_height: 3.3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn prior_map_matches_scalar_ops() {
        let cfg = GroundConfig::default();
        let cam = cam();
        let map = prior_map(&cam, &cfg).unwrap();
        for &(x, y) in &[(0usize, 250usize), (600, 374), (1241, 100)] {
            let v = y as f64;
            assert_eq!(*map.depth.get(x, y), ground_depth(&cam, &cfg, v).unwrap());
            assert_eq!(
                *map.disparity.get(x, y),
                virtual_disparity(&cam, &cfg, v).unwrap()
            );
            assert_eq!(
                *map.offset.get(x, y),
                vertical_offset(&cfg, &cam, v).unwrap()
            );
        }
        for y in 0..cam.height() {
            assert_eq!(map.depth.get(5, y).is_none(), (y as f64) <= 180.0);
        }
    }

    #[test]
    fn depth_strictly_decreasing_below_horizon() {
        let cfg = GroundConfig::default();
        let mut prev = f64::INFINITY;
        for y in 181..375 {
            let z = ground_depth(&cam(), &cfg, y as f64).unwrap().unwrap();
            assert!(z < prev);
            prev = z;
        }
    }
}
