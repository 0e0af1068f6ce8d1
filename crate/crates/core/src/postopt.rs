//! Fusion of dense predicted depth with sparse visual-odometry depth.
//!
//! The image is split into superpixels. Each segment `k` gets a mean
//! log-depth `lg₀ᵏ` and, if it contains VO samples, a target `lg_tarᵏ`
//! obtained by aligning the prediction to the samples with a single scale.
//! The per-segment log-depths then solve the quadratic program
//!
//! ```text
//! min  λ₀ Σ_{k<j} (δᵏ − δʲ)² + Σₖ λ₁ᵏ (lgᵏ − lg_tarᵏ)² + λ₂ Σₖ (δᵏ)²,   δᵏ = lgᵏ − lg₀ᵏ
//! ```
//!
//! whose stationarity condition is the linear system `A·lg = B` with
//! `A = diag(Nλ₀ + λ₁ᵏ + λ₂) − λ₀·𝟙𝟙ᵀ`. Finally every pixel of a segment is
//! shifted by the segment's solved log offset.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slic3d::{segment_stats, slic3d, Segmentation, SlicParams};
use crate::warprecon::{DepthMap, Image};

/// One VO depth measurement at a sub-pixel location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoSample {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseDepth {
    samples: Vec<VoSample>,
}

impl SparseDepth {
    /// Checks that depths are positive and coordinates fall inside a
    /// `width × height` image.
    pub fn new(samples: Vec<VoSample>, width: usize, height: usize) -> Result<Self> {
        for s in &samples {
            if !(s.depth > 0.0 && s.depth.is_finite()) {
                return Err(Error::invalid(format!(
                    "VO depth must be positive, got {}",
                    s.depth
                )));
            }
            let inside =
                s.u >= -0.5 && s.v >= -0.5 && s.u < width as f64 - 0.5 && s.v < height as f64 - 0.5;
            if !inside {
                return Err(Error::invalid(format!(
                    "VO sample ({}, {}) lies outside the {width}x{height} image",
                    s.u, s.v
                )));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[VoSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Nearest integer pixel of a sample.
    pub fn pixel_of(s: &VoSample) -> (usize, usize) {
        (s.u.round().max(0.0) as usize, s.v.round().max(0.0) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptWeights {
    /// Consistency between segment offsets. It multiplies a sum over all
    /// segment pairs, so its effective strength grows with the segment count.
    pub lambda0: f64,
    /// Pull towards the VO target (segments with VO samples only).
    pub lambda1: f64,
    /// Pull towards the prediction.
    pub lambda2: f64,
}

impl Default for OptWeights {
    fn default() -> Self {
        Self {
            // tuned with examples/weight_sweep.rs at ~480 segments
            lambda0: 0.003,
            lambda1: 4.0,
            lambda2: 1.0,
        }
    }
}

impl OptWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda0, self.lambda1, self.lambda2];
        if w.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "weights must be finite and non-negative, got {w:?}"
            )));
        }
        Ok(())
    }
}

/// How a segment's solved log-depth is applied to its pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyMode {
    /// `lg_out = lg_net + (lg_solved − lg₀)`
    #[default]
    Additive,
    /// `lg_out = lg_net · (lg_solved / lg₀)`, for compatibility only.
    Ratio,
}

/// Mean of `ln(d_vo / d₀)` over the samples of one segment; `None` without samples.
pub fn inner_scale(d0: &[f64], d_vo: &[f64]) -> Result<Option<f64>> {
    if d0.len() != d_vo.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted depths for {} VO samples",
            d0.len(),
            d_vo.len()
        )));
    }
    if d0.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for (&p, &v) in d0.iter().zip(d_vo) {
        if !(p > 0.0 && v > 0.0) {
            return Err(Error::invalid(format!(
                "depths must be positive, got {p} and {v}"
            )));
        }
        sum += (v / p).ln();
    }
    Ok(Some(sum / d0.len() as f64))
}

/// The outer linear system over `N` segments.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterSystem {
    pub lambda0: f64,
    pub lambda2: f64,
    /// `λ₁ᵏ`: `λ₁` for segments with VO samples, else 0.
    pub lambda1: Vec<f64>,
    pub lg0: Vec<f64>,
    /// Equal to `lg₀ᵏ` where a segment has no target.
    pub lg_tar: Vec<f64>,
}

impl OuterSystem {
    pub fn new(weights: &OptWeights, lg0: Vec<f64>, lg_tar: &[Option<f64>]) -> Result<Self> {
        weights.validate()?;
        if lg0.len() != lg_tar.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} segment means for {} targets",
                lg0.len(),
                lg_tar.len()
            )));
        }
        if lg0
            .iter()
            .chain(lg_tar.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("segment log-depths must be finite"));
        }
        let lambda1 = lg_tar
            .iter()
            .map(|t| if t.is_some() { weights.lambda1 } else { 0.0 })
            .collect();
        let lg_tar = lg_tar
            .iter()
            .zip(&lg0)
            .map(|(t, l)| t.unwrap_or(*l))
            .collect();
        Ok(Self {
            lambda0: weights.lambda0,
            lambda2: weights.lambda2,
            lambda1,
            lg0,
            lg_tar,
        })
    }

    pub fn len(&self) -> usize {
        self.lg0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lg0.is_empty()
    }

    /// `Nλ₀ + λ₁ᵏ + λ₂`
    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.lambda1
            .iter()
            .map(|l1| n * self.lambda0 + l1 + self.lambda2)
            .collect()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::from_element(self.len(), self.len(), -self.lambda0);
        for (k, d) in self.diagonal().into_iter().enumerate() {
            a[(k, k)] += d;
        }
        a
    }

    pub fn rhs(&self) -> DVector<f64> {
        let n = self.len() as f64;
        let total: f64 = self.lg0.iter().sum();
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|k| {
                self.lambda2 * self.lg0[k]
                    + self.lambda1[k] * self.lg_tar[k]
                    + self.lambda0 * (n * self.lg0[k] - total)
            }),
        )
    }

    /// Fails when `A` is singular: with `λ₀ > 0` that happens only if every
    /// `λ₁ᵏ + λ₂` is zero; with `λ₀ = 0` (or `N = 1`) if any of them is.
    pub fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::SingularSystem("no segments to optimize".into()));
        }
        let anchors: Vec<f64> = self.lambda1.iter().map(|l| l + self.lambda2).collect();
        if self.lambda0 > 0.0 && self.len() > 1 {
            if anchors.iter().all(|a| *a == 0.0) {
                return Err(Error::SingularSystem(format!(
                    "λ₂ = 0 and none of the {} segments has VO samples",
                    self.len()
                )));
            }
        } else if let Some(k) = anchors.iter().position(|a| *a == 0.0) {
            return Err(Error::SingularSystem(format!(
                "segment {k} has neither VO samples nor prior weight, and λ₀ = {} cannot couple it",
                self.lambda0
            )));
        }
        Ok(())
    }

    /// Reference path: LU factorization of the dense matrix.
    pub fn solve_dense(&self) -> Result<Vec<f64>> {
        self.check()?;
        let lu = self.matrix().lu();
        let x = lu
            .solve(&self.rhs())
            .ok_or_else(|| Error::SingularSystem("LU factorization failed".into()))?;
        Ok(x.iter().copied().collect())
    }

    /// `O(N)` path through the Sherman–Morrison identity for `D − λ₀·𝟙𝟙ᵀ`.
    pub fn solve_rank_one(&self) -> Result<Vec<f64>> {
        self.check()?;
        let d = self.diagonal();
        let b = self.rhs();
        let dinv_b: Vec<f64> = b.iter().zip(&d).map(|(b, d)| b / d).collect();
        let dinv_1: Vec<f64> = d.iter().map(|d| 1.0 / d).collect();
        let s_b: f64 = dinv_b.iter().sum();
        let s_1: f64 = dinv_1.iter().sum();
        let denom = 1.0 - self.lambda0 * s_1;
        if denom.abs() < 1e-300 {
            return Err(Error::SingularSystem(
                "rank-one update denominator vanished".into(),
            ));
        }
        let coef = self.lambda0 * s_b / denom;
        Ok(dinv_b
            .iter()
            .zip(&dinv_1)
            .map(|(x, u)| x + coef * u)
            .collect())
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        self.solve_rank_one()
    }

    /// `‖A·lg − B‖∞`
    pub fn kkt_residual(&self, lg: &[f64]) -> f64 {
        let x = DVector::from_column_slice(lg);
        (self.matrix() * x - self.rhs()).amax()
    }

    /// Value of the quadratic objective.
    pub fn objective(&self, lg: &[f64]) -> f64 {
        let n = self.len();
        let delta: Vec<f64> = lg.iter().zip(&self.lg0).map(|(l, l0)| l - l0).collect();
        // Σ_{k<j}(δk − δj)² = N·Σδ² − (Σδ)²
        let s: f64 = delta.iter().sum();
        let s2: f64 = delta.iter().map(|d| d * d).sum();
        let pairs = (n as f64 * s2 - s * s).max(0.0);
        let vo: f64 = (0..n)
            .map(|k| self.lambda1[k] * (lg[k] - self.lg_tar[k]).powi(2))
            .sum();
        self.lambda0 * pairs + vo + self.lambda2 * s2
    }
}

/// Shift every valid pixel of segment `k` by its solved offset. Segments with
/// `None` on either side pass through unchanged.
pub fn apply_to_pixels(
    depth: &DepthMap,
    seg: &Segmentation,
    lg0: &[Option<f64>],
    lg_solved: &[Option<f64>],
    mode: ApplyMode,
) -> Result<DepthMap> {
    if seg.labels.width() != depth.width() || seg.labels.height() != depth.height() {
        return Err(Error::ShapeMismatch(
            "segmentation and depth sizes differ".into(),
        ));
    }
    if lg0.len() != seg.num_segments() || lg_solved.len() != seg.num_segments() {
        return Err(Error::ShapeMismatch(format!(
            "{} segments but {} / {} log-depths",
            seg.num_segments(),
            lg0.len(),
            lg_solved.len()
        )));
    }
    let labels = seg.labels.as_slice();
    let values: Vec<f64> = depth
        .values()
        .par_iter()
        .zip(depth.valid_mask().par_iter())
        .zip(labels.par_iter())
        .map(|((&d, &valid), &l)| {
            let k = l as usize;
            let (Some(base), Some(solved), true) = (lg0[k], lg_solved[k], valid) else {
                return d;
            };
            match mode {
                ApplyMode::Additive => d * (solved - base).exp(),
                ApplyMode::Ratio => {
                    if base.abs() < 1e-12 {
                        d
                    } else {
                        (d.ln() * (solved / base)).exp()
                    }
                }
            }
        })
        .collect();
    let mut out =
        DepthMap::from_values(depth.width(), depth.height(), values)?.with_kind(depth.kind());
    for (i, &v) in depth.valid_mask().iter().enumerate() {
        if !v {
            out.set_index(i, None);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PostOptResult {
    pub depth: DepthMap,
    pub segmentation: Segmentation,
    /// Mean log-depth per segment; `None` for segments without valid depth.
    pub lg0: Vec<Option<f64>>,
    pub lg_solved: Vec<Option<f64>>,
    /// VO samples whose nearest pixel had no valid prediction.
    pub dropped_vo: usize,
    pub segments_with_vo: usize,
    pub kkt_residual: f64,
}

/// Per-segment VO targets and the number of dropped samples.
pub fn segment_targets(
    depth: &DepthMap,
    seg: &Segmentation,
    lg0: &[Option<f64>],
    vo: &SparseDepth,
) -> Result<(Vec<Option<f64>>, usize)> {
    let k = seg.num_segments();
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); k];
    let mut dropped = 0;
    for s in vo.samples() {
        let (x, y) = SparseDepth::pixel_of(s);
        if x >= depth.width() || y >= depth.height() {
            return Err(Error::invalid(format!(
                "VO sample ({}, {}) outside image",
                s.u, s.v
            )));
        }
        match depth.get(x, y) {
            Some(d0) => {
                let l = *seg.labels.get(x, y) as usize;
                pairs[l].0.push(d0);
                pairs[l].1.push(s.depth);
            }
            None => dropped += 1,
        }
    }
    let targets = pairs
        .par_iter()
        .zip(lg0.par_iter())
        .map(|((d0, dv), base)| {
            Ok(match (base, inner_scale(d0, dv)?) {
                (Some(b), Some(log_v)) => Some(b + log_v),
                _ => None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((targets, dropped))
}

/// Segment, align each segment to VO, solve the outer system and apply it.
pub fn post_optimize(
    depth: &DepthMap,
    image: &Image,
    vo: &SparseDepth,
    slic_params: &SlicParams,
    weights: &OptWeights,
    mode: ApplyMode,
) -> Result<PostOptResult> {
    weights.validate()?;
    let segmentation = slic3d(image, depth, slic_params)?;
    post_optimize_segments(depth, segmentation, vo, weights, mode)
}

/// Same as [`post_optimize`] with a precomputed segmentation.
pub fn post_optimize_segments(
    depth: &DepthMap,
    segmentation: Segmentation,
    vo: &SparseDepth,
    weights: &OptWeights,
    mode: ApplyMode,
) -> Result<PostOptResult> {
    let stats = segment_stats(&segmentation, depth)?;
    let lg0: Vec<Option<f64>> = stats.iter().map(|s| s.mean_log_depth).collect();
    let (targets, dropped_vo) = segment_targets(depth, &segmentation, &lg0, vo)?;

    // flagged segments stay out of the system
    let active: Vec<usize> = (0..lg0.len()).filter(|&k| lg0[k].is_some()).collect();
    let system = OuterSystem::new(
        weights,
        active.iter().map(|&k| lg0[k].expect("active")).collect(),
        &active.iter().map(|&k| targets[k]).collect::<Vec<_>>(),
    )?;
    let solved = system.solve()?;
    let kkt_residual = system.kkt_residual(&solved);
    let mut lg_solved = vec![None; lg0.len()];
    for (&k, v) in active.iter().zip(&solved) {
        lg_solved[k] = Some(*v);
    }
    let out = apply_to_pixels(depth, &segmentation, &lg0, &lg_solved, mode)?;
    Ok(PostOptResult {
        depth: out,
        segmentation,
        segments_with_vo: targets.iter().filter(|t| t.is_some()).count(),
        lg0,
        lg_solved,
        dropped_vo,
        kkt_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::warprecon::ColorSpace;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inner_scale_examples() {
        let lv = inner_scale(&[4.0, 4.0], &[8.0, 8.0]).unwrap().unwrap();
        assert_abs_diff_eq!(lv, 2f64.ln(), epsilon = 1e-15);
        assert_eq!(inner_scale(&[3.0, 7.0], &[3.0, 7.0]).unwrap(), Some(0.0));
        let lv = inner_scale(&[2.0, 8.0], &[4.0, 4.0]).unwrap().unwrap();
        assert_abs_diff_eq!(lv, 0.0, epsilon = 1e-15);
        assert_eq!(inner_scale(&[], &[]).unwrap(), None);
        assert!(inner_scale(&[1.0], &[]).is_err());
    }

    #[test]
    fn single_segment_closed_form() {
        let w = OptWeights {
            lambda0: 0.7,
            lambda1: 3.0,
            lambda2: 1.5,
        };
        let sys = OuterSystem::new(&w, vec![1.2], &[Some(2.0)]).unwrap();
        let expected = (1.5 * 1.2 + 3.0 * 2.0) / 4.5;
        assert_abs_diff_eq!(sys.solve_dense().unwrap()[0], expected, epsilon = 1e-14);
        assert_abs_diff_eq!(sys.solve_rank_one().unwrap()[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn targets_at_prior_are_a_fixed_point() {
        let lg0 = vec![0.3, 1.9, -0.4, 2.2];
        let tar: Vec<Option<f64>> = vec![Some(0.3), None, Some(-0.4), Some(2.2)];
        let sys = OuterSystem::new(&OptWeights::default(), lg0.clone(), &tar).unwrap();
        for (a, b) in sys.solve().unwrap().iter().zip(&lg0) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn singular_configurations_reported() {
        let w = OptWeights {
            lambda0: 0.5,
            lambda1: 2.0,
            lambda2: 0.0,
        };
        let sys = OuterSystem::new(&w, vec![1.0, 2.0], &[None, None]).unwrap();
        assert!(matches!(sys.solve(), Err(Error::SingularSystem(_))));
        // one anchored segment is enough when λ₀ couples them
        let sys = OuterSystem::new(&w, vec![1.0, 2.0], &[Some(1.5), None]).unwrap();
        assert!(sys.solve().is_ok());
        let w0 = OptWeights { lambda0: 0.0, ..w };
        let sys = OuterSystem::new(&w0, vec![1.0, 2.0], &[Some(1.5), None]).unwrap();
        assert!(matches!(sys.solve_dense(), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn matrix_entries() {
        let w = OptWeights {
            lambda0: 0.5,
            lambda1: 2.0,
            lambda2: 1.0,
        };
        let sys = OuterSystem::new(&w, vec![1.0, 2.0, 4.0], &[Some(0.0), None, None]).unwrap();
        let a = sys.matrix();
        assert_abs_diff_eq!(a[(0, 0)], 2.0 * 0.5 + 2.0 + 1.0);
        assert_abs_diff_eq!(a[(1, 1)], 2.0 * 0.5 + 1.0);
        assert_abs_diff_eq!(a[(0, 2)], -0.5);
        let b = sys.rhs();
        // λ₀·Σ_{i≠k}(lg₀ᵏ − lg₀ⁱ) for k = 2: 0.5·(3 + 2)
        assert_abs_diff_eq!(b[2], 4.0 + 2.5, epsilon = 1e-15);
    }

    fn two_segment_scene() -> (DepthMap, Segmentation) {
        let w = 4;
        let depth = DepthMap::from_values(w, 1, vec![2.0, 3.0, 5.0, 0.0]).unwrap();
        let img = Image::from_fn(w, 1, ColorSpace::Lab, |_, _, _| 0.0);
        let labels = Grid::from_vec(w, 1, vec![0, 0, 1, 1]).unwrap();
        (
            depth.clone(),
            Segmentation::from_labels(labels, &img, &depth).unwrap(),
        )
    }

    #[test]
    fn apply_offsets() {
        let (depth, seg) = two_segment_scene();
        let lg0 = vec![Some(1.0), Some(5f64.ln())];
        let same = apply_to_pixels(&depth, &seg, &lg0, &lg0, ApplyMode::Additive).unwrap();
        assert_eq!(same.values(), depth.values());
        let solved = vec![Some(1.0), Some(5f64.ln() + 2f64.ln())];
        let out = apply_to_pixels(&depth, &seg, &lg0, &solved, ApplyMode::Additive).unwrap();
        assert_eq!(out.get(0, 0), Some(2.0));
        assert_eq!(out.get(1, 0), Some(3.0));
        assert_abs_diff_eq!(out.get(2, 0).unwrap(), 10.0, epsilon = 1e-12);
        assert_eq!(out.get(3, 0), None);
    }

    #[test]
    fn ratio_mode_agrees_at_fixed_point() {
        let (depth, seg) = two_segment_scene();
        let lg0 = vec![Some(1.0), Some(5f64.ln())];
        let out = apply_to_pixels(&depth, &seg, &lg0, &lg0, ApplyMode::Ratio).unwrap();
        for (a, b) in out.values().iter().zip(depth.values()).take(3) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn vo_on_invalid_depth_dropped() {
        let (depth, seg) = two_segment_scene();
        let stats = segment_stats(&seg, &depth).unwrap();
        let lg0: Vec<_> = stats.iter().map(|s| s.mean_log_depth).collect();
        let vo = SparseDepth::new(
            vec![
                VoSample {
                    u: 0.2,
                    v: 0.0,
                    depth: 4.0,
                },
                VoSample {
                    u: 2.9,
                    v: 0.1,
                    depth: 9.0,
                },
            ],
            4,
            1,
        )
        .unwrap();
        let (targets, dropped) = segment_targets(&depth, &seg, &lg0, &vo).unwrap();
        assert_eq!(dropped, 1);
        assert_abs_diff_eq!(
            targets[0].unwrap(),
            lg0[0].unwrap() + 2f64.ln(),
            epsilon = 1e-12
        );
        assert_eq!(targets[1], None);
    }

    #[test]
    fn sparse_depth_validation() {
        assert!(SparseDepth::new(
            vec![VoSample {
                u: 1.0,
                v: 1.0,
                depth: 0.0
            }],
            4,
            4
        )
        .is_err());
        assert!(SparseDepth::new(
            vec![VoSample {
                u: 4.0,
                v: 1.0,
                depth: 1.0
            }],
            4,
            4
        )
        .is_err());
        assert!(SparseDepth::new(
            vec![VoSample {
                u: 3.4,
                v: 0.0,
                depth: 1.0
            }],
            4,
            4
        )
        .is_ok());
    }

    #[test]
    fn no_vo_leaves_depth_unchanged() {
        let (depth, seg) = two_segment_scene();
        let r = post_optimize_segments(
            &depth,
            seg,
            &SparseDepth::default(),
            &OptWeights::default(),
            ApplyMode::Additive,
        )
        .unwrap();
        for (a, b) in r.depth.values().iter().zip(depth.values()).take(3) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
