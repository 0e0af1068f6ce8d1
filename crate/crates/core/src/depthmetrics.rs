//! Standard depth-estimation error metrics.
//!
//! Pixels count when the ground truth is valid and strictly inside the caps
//! and the prediction is valid. With median scaling the prediction is first
//! multiplied by `median(gt) / median(pred)` over those pixels; it is then
//! clamped to the caps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warprecon::{scale_invariant_loss, DepthMap};

pub const DEFAULT_MIN_DEPTH: f64 = 1e-3;
pub const DEFAULT_MAX_DEPTH: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    #[default]
    None,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub min: f64,
    pub max: f64,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            min: DEFAULT_MIN_DEPTH,
            max: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// `mean(d²) − mean(d)²` with `d = ln pred − ln gt`.
    pub silog: f64,
    pub count: usize,
    /// Factor applied to the prediction (1 without scaling).
    pub scale: f64,
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    total: f64,
    comp: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.total + x;
        if self.total.abs() >= x.abs() {
            self.comp += (self.total - t) + x;
        } else {
            self.comp += (x - t) + self.total;
        }
        self.total = t;
    }

    fn value(&self) -> f64 {
        self.total + self.comp
    }
}

/// Median, averaging the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn evaluate(
    pred: &DepthMap,
    gt: &DepthMap,
    scale_mode: ScaleMode,
    caps: Caps,
) -> Result<MetricReport> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    if !(caps.min >= 0.0 && caps.min < caps.max) {
        return Err(Error::invalid(format!(
            "invalid depth caps [{}, {}]",
            caps.min, caps.max
        )));
    }
    let (p, g): (Vec<f64>, Vec<f64>) = pred
        .iter()
        .zip(gt.iter())
        .filter_map(|(p, g)| match (p, g) {
            (Some(p), Some(g)) if g > caps.min && g < caps.max => Some((p, g)),
            _ => None,
        })
        .unzip();
    if p.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    let scale = match scale_mode {
        ScaleMode::None => 1.0,
        ScaleMode::Median => median(&g).expect("non-empty") / median(&p).expect("non-empty"),
    };

    let mut acc = [Sum::default(); 6];
    let mut within = [0usize; 3];
    for (&p, &g) in p.iter().zip(&g) {
        let p = (p * scale).clamp(caps.min, caps.max);
        let diff = p - g;
        let d = p.ln() - g.ln();
        acc[0].add(diff.abs() / g);
        acc[1].add(diff * diff / g);
        acc[2].add(diff * diff);
        acc[3].add(d * d);
        acc[4].add(d);
        let ratio = (p / g).max(g / p);
        for (k, c) in within.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *c += 1;
            }
        }
    }
    let n = p.len() as f64;
    let mean = |s: &Sum| s.value() / n;
    let mean_d = mean(&acc[4]);
    Ok(MetricReport {
        abs_rel: mean(&acc[0]),
        sq_rel: mean(&acc[1]),
        rmse: mean(&acc[2]).sqrt(),
        rmse_log: mean(&acc[3]).sqrt(),
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
        silog: (mean(&acc[3]) - mean_d * mean_d).max(0.0),
        count: p.len(),
        scale,
    })
}

/// Scale-invariant log error with weight `lambda` on the squared mean.
pub fn silog_only(pred: &DepthMap, gt: &DepthMap, lambda: f64) -> Result<f64> {
    scale_invariant_loss(pred, gt, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn map(v: &[f64]) -> DepthMap {
        DepthMap::from_values(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = map(&[1.0, 5.0, 20.0, 70.0]);
        let r = evaluate(&gt, &gt, ScaleMode::None, Caps::default()).unwrap();
        assert_eq!(
            (r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.silog),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn median_scaling_cancels_global_scale() {
        let gt = map(&[1.0, 5.0, 20.0, 30.0]);
        let pred = map(&[2.0, 10.0, 40.0, 60.0]);
        let r = evaluate(&pred, &gt, ScaleMode::Median, Caps::default()).unwrap();
        assert_eq!(r.scale, 0.5);
        assert_abs_diff_eq!(r.abs_rel, 0.0, epsilon = 1e-15);
        assert_eq!(r.delta1, 1.0);
    }

    #[test]
    fn constant_ratio() {
        let gt = map(&[1.0, 5.0, 20.0, 30.0]);
        let pred = gt.map_valid(|_, d| 1.2 * d);
        let r = evaluate(&pred, &gt, ScaleMode::None, Caps::default()).unwrap();
        assert_abs_diff_eq!(r.abs_rel, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.rmse_log, 1.2f64.ln(), epsilon = 1e-12);
        assert_eq!(r.delta1, 1.0);
        assert_abs_diff_eq!(r.silog, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn delta_threshold_is_strict() {
        let gt = map(&[4.0, 4.0]);
        let pred = map(&[5.0, 4.0]);
        let r = evaluate(&pred, &gt, ScaleMode::None, Caps::default()).unwrap();
        assert_eq!(r.delta1, 0.5);
        assert_eq!(r.delta2, 1.0);
    }

    #[test]
    fn masking_and_caps() {
        let gt = map(&[0.0, 90.0, 10.0]);
        let pred = map(&[3.0, 3.0, 100.0]);
        let r = evaluate(&pred, &gt, ScaleMode::None, Caps::default()).unwrap();
        assert_eq!(r.count, 1);
        // prediction clamped to 80
        assert_abs_diff_eq!(r.abs_rel, 7.0, epsilon = 1e-12);
        let none = map(&[0.0, 0.0, 0.0]);
        assert!(matches!(
            evaluate(&none, &gt, ScaleMode::None, Caps::default()),
            Err(Error::EmptyOverlap)
        ));
    }

    #[test]
    fn silog_examples() {
        let gt = map(&[1.0, 5.0, 20.0]);
        let pred = gt.map_valid(|_, d| 3.0 * d);
        assert_abs_diff_eq!(silog_only(&pred, &gt, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            silog_only(&pred, &gt, 0.0).unwrap(),
            3f64.ln().powi(2),
            epsilon = 1e-12
        );
        assert_eq!(silog_only(&gt, &gt, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
