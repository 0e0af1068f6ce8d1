//! Pseudo-3D training labels from 2D annotations.
//!
//! Low-threshold 3D detections are matched one-to-one to the 2D annotations
//! of the same category by minimum total `1 − IoU`. Matches whose cost
//! exceeds `eps` are discarded as mis-detections. Each kept annotation
//! inherits the 3D state of its detection, and the center heatmap plus the
//! 2D size/offset maps are rebuilt from the kept labels.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::anchors3d::{Box2d, DetectionBox};
use crate::camgeo::{CameraModel, Projection};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// IoU of every prediction (rows) against every annotation (columns).
pub fn iou_matrix(preds: &[Box2d], annots: &[Box2d]) -> Result<DMatrix<f64>> {
    if let Some(b) = preds.iter().chain(annots).find(|b| !b.is_valid()) {
        return Err(Error::invalid(format!("box {b:?} has no area")));
    }
    Ok(DMatrix::from_fn(preds.len(), annots.len(), |i, j| {
        preds[i].iou(&annots[j])
    }))
}

/// Minimum-cost assignment of rows to columns. Every row is assigned when
/// `rows ≤ cols`, otherwise every column is. Entry `i` is the column of row `i`.
pub fn hungarian(cost: &DMatrix<f64>) -> Result<Vec<Option<usize>>> {
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("assignment costs must be finite"));
    }
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Ok(vec![None; rows]);
    }
    if rows > cols {
        let by_col = hungarian(&cost.transpose())?;
        let mut out = vec![None; rows];
        for (j, i) in by_col.into_iter().enumerate() {
            if let Some(i) = i {
                out[i] = Some(j);
            }
        }
        return Ok(out);
    }

    // Shortest augmenting paths with row/column potentials; index 0 is a
    // virtual column holding the row being inserted.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub annot: usize,
    /// `1 − IoU`
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub kept: Vec<MatchPair>,
    /// Matched pairs whose cost exceeds `eps`.
    pub rejected: Vec<MatchPair>,
    pub unmatched_annots: Vec<usize>,
}

impl Matching {
    pub fn total_cost(&self) -> f64 {
        self.kept.iter().chain(&self.rejected).map(|p| p.cost).sum()
    }
}

/// Assignment on cost `1 − IoU`, then rejection of pairs costing more than `eps`.
pub fn match_min_cost(iou: &DMatrix<f64>, eps: f64) -> Result<Matching> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid(format!("eps must lie in (0, 1], got {eps}")));
    }
    let cost = iou.map(|x| 1.0 - x);
    let assignment = hungarian(&cost)?;
    let mut out = Matching::default();
    let mut covered = vec![false; iou.ncols()];
    for (pred, annot) in assignment.into_iter().enumerate() {
        let Some(annot) = annot else { continue };
        covered[annot] = true;
        let pair = MatchPair {
            pred,
            annot,
            cost: cost[(pred, annot)],
        };
        if pair.cost > eps {
            out.rejected.push(pair);
        } else {
            out.kept.push(pair);
        }
    }
    out.unmatched_annots = (0..iou.ncols()).filter(|&j| !covered[j]).collect();
    Ok(out)
}

/// A 2D annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub box2d: Box2d,
    pub category: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoLabelConfig {
    /// Largest accepted matching cost.
    pub eps: f64,
    /// Heatmap down-sampling factor.
    pub stride: usize,
    /// Detections scoring below this are ignored.
    pub score_threshold: f64,
    /// Overlap used to size the center Gaussians.
    pub min_overlap: f64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            eps: 0.5,
            stride: 4,
            score_threshold: 0.05,
            min_overlap: 0.7,
        }
    }
}

/// Radius (in heatmap cells) at which a shifted `w × h` box still overlaps
/// the original by `min_overlap`, as used by center-point detectors.
pub fn gaussian_radius(w: f64, h: f64, min_overlap: f64) -> f64 {
    let mo = min_overlap;
    let b1 = h + w;
    let c1 = w * h * (1.0 - mo) / (1.0 + mo);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).sqrt()) / 2.0;
    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - mo) * w * h;
    let r2 = (b2 + (b2 * b2 - 16.0 * c2).sqrt()) / 2.0;
    let a3 = 4.0 * mo;
    let b3 = -2.0 * mo * (h + w);
    let c3 = (mo - 1.0) * w * h;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / 2.0;
    r1.min(r2).min(r3)
}

/// Splat a Gaussian of integer radius `r` at `center`, keeping the
/// element-wise maximum with existing values.
pub fn draw_gaussian(heatmap: &mut Grid<f32>, center: (usize, usize), radius: usize) {
    let sigma = (2 * radius + 1) as f64 / 6.0;
    let (cx, cy) = (center.0 as isize, center.1 as isize);
    let r = radius as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx + dx, cy + dy);
            if x < 0 || y < 0 || x >= heatmap.width() as isize || y >= heatmap.height() as isize {
                continue;
            }
            let g = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() as f32;
            let cell = heatmap.get_mut(x as usize, y as usize);
            *cell = cell.max(g);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PseudoLabelSet {
    pub categories: Vec<String>,
    /// Annotation box with the matched detection's 3D state.
    pub labels: Vec<DetectionBox>,
    pub matching: BTreeMap<String, Matching>,
    /// Kept labels whose projected center fell outside the image.
    pub skipped_outside: usize,
    /// One center heatmap per category.
    pub heatmaps: Vec<Grid<f32>>,
    /// `(w, h)` of the 2D box in input pixels at each peak cell.
    pub size: Grid<[f32; 2]>,
    /// Sub-cell offset of the projected center at each peak cell.
    pub offset: Grid<[f32; 2]>,
    /// Cells carrying 2D regression targets.
    pub reg_mask: Grid<bool>,
}

impl PseudoLabelSet {
    pub fn removed(&self) -> usize {
        self.matching.values().map(|m| m.rejected.len()).sum()
    }
}

/// Build pseudo labels for one frame.
pub fn build_pseudo_labels(
    preds: &[DetectionBox],
    annots: &[Annotation],
    cam: &CameraModel,
    categories: &[String],
    cfg: &PseudoLabelConfig,
) -> Result<PseudoLabelSet> {
    if cfg.stride == 0 {
        return Err(Error::InvalidConfig(
            "heatmap stride must be positive".into(),
        ));
    }
    if !(cfg.min_overlap > 0.0 && cfg.min_overlap < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "min overlap must lie in (0, 1), got {}",
            cfg.min_overlap
        )));
    }
    let index: BTreeMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    if let Some(a) = annots
        .iter()
        .find(|a| !index.contains_key(a.category.as_str()))
    {
        return Err(Error::invalid(format!(
            "unknown annotation category {:?}",
            a.category
        )));
    }

    let mut labels = Vec::new();
    let mut matching = BTreeMap::new();
    for cat in categories {
        let p: Vec<&DetectionBox> = preds
            .iter()
            .filter(|d| &d.category == cat && d.score >= cfg.score_threshold)
            .collect();
        let t: Vec<&Annotation> = annots.iter().filter(|a| &a.category == cat).collect();
        if t.is_empty() {
            continue;
        }
        let pb: Vec<Box2d> = p.iter().map(|d| d.box2d).collect();
        let tb: Vec<Box2d> = t.iter().map(|a| a.box2d).collect();
        let m = match_min_cost(&iou_matrix(&pb, &tb)?, cfg.eps)?;
        for pair in &m.kept {
            let mut label = p[pair.pred].clone();
            label.box2d = t[pair.annot].box2d;
            label.score = 1.0;
            labels.push(label);
        }
        matching.insert(cat.clone(), m);
    }

    let r = cfg.stride;
    let (hw, hh) = (cam.width().div_ceil(r), cam.height().div_ceil(r));
    let mut heatmaps = vec![Grid::filled(hw, hh, 0.0f32); categories.len()];
    let mut size = Grid::filled(hw, hh, [0.0f32; 2]);
    let mut offset = Grid::filled(hw, hh, [0.0f32; 2]);
    let mut reg_mask = Grid::filled(hw, hh, false);
    let mut skipped_outside = 0;
    let mut kept = Vec::with_capacity(labels.len());
    for label in labels {
        let center: Vector2<f64> = match cam.project(&label.center)? {
            Projection::Visible(p) => p,
            _ => {
                skipped_outside += 1;
                continue;
            }
        };
        let scaled = center / r as f64;
        let cell = (
            (scaled.x.floor() as usize).min(hw - 1),
            (scaled.y.floor() as usize).min(hh - 1),
        );
        let radius = gaussian_radius(
            label.box2d.width() / r as f64,
            label.box2d.height() / r as f64,
            cfg.min_overlap,
        )
        .max(0.0)
        .floor() as usize;
        draw_gaussian(&mut heatmaps[index[label.category.as_str()]], cell, radius);
        *size.get_mut(cell.0, cell.1) = [label.box2d.width() as f32, label.box2d.height() as f32];
        *offset.get_mut(cell.0, cell.1) = [
            (scaled.x - cell.0 as f64) as f32,
            (scaled.y - cell.1 as f64) as f32,
        ];
        *reg_mask.get_mut(cell.0, cell.1) = true;
        kept.push(label);
    }
    Ok(PseudoLabelSet {
        categories: categories.to_vec(),
        labels: kept,
        matching,
        skipped_outside,
        heatmaps,
        size,
        offset,
        reg_mask,
    })
}

/// Categories annotated in a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMask {
    pub annotated: BTreeSet<String>,
}

impl CategoryMask {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(cats: I) -> Self {
        Self {
            annotated: cats.into_iter().map(Into::into).collect(),
        }
    }
}

/// Per-category supervision flags: `true` only for annotated categories.
pub fn selective_mask(dataset: &CategoryMask, all: &[String]) -> Result<Vec<bool>> {
    let known: BTreeSet<&str> = all.iter().map(String::as_str).collect();
    if let Some(c) = dataset
        .annotated
        .iter()
        .find(|c| !known.contains(c.as_str()))
    {
        return Err(Error::invalid(format!("unknown category {c:?}")));
    }
    let flags: Vec<bool> = all.iter().map(|c| dataset.annotated.contains(c)).collect();
    if !flags.iter().any(|f| *f) {
        log::warn!("no supervised category among {all:?}");
    }
    Ok(flags)
}
