//! Depth-augmented SLIC superpixels.
//!
//! Each pixel is described by its LAB color, image position and depth. The
//! clustering alternates between assigning pixels to the nearest center
//! under
//!
//! ```text
//! λ_lab·‖ΔLAB‖ + λ_d·|Δd| + λ_pix·‖ΔX‖
//! ```
//!
//! and moving each center towards the mean of its members. The search for a
//! pixel is restricted to centers within `2s` of it (plus its current center).
//! Because the distance uses plain norms, the mean is not guaranteed to lower
//! a cluster's cost; the update backtracks towards the previous center when it
//! would, so the total assignment cost never increases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::warprecon::{ColorSpace, DepthMap, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlicParams {
    /// Seed grid step `s` (px).
    pub step: usize,
    pub lambda_lab: f64,
    /// Weight per meter of depth difference.
    pub lambda_depth: f64,
    pub lambda_pix: f64,
    pub max_iter: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            step: 16,
            lambda_lab: 1.0,
            lambda_depth: 0.5,
            lambda_pix: 0.5 / 16.0,
            max_iter: 10,
        }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<()> {
        if self.step < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid step must be at least 2, got {}",
                self.step
            )));
        }
        let w = [self.lambda_lab, self.lambda_depth, self.lambda_pix];
        if w.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) || w.iter().all(|l| *l == 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weights must be finite, non-negative and not all zero, got {w:?}"
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("need at least one iteration".into()));
        }
        Ok(())
    }
}

/// Cluster feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterCenter {
    pub lab: [f64; 3],
    /// `(x, y)` in pixels.
    pub pos: [f64; 2],
    /// Mean depth of the members with valid depth.
    pub depth: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    /// Cluster id per pixel, dense in `[0, K)`.
    pub labels: Grid<u32>,
    /// Mean feature of each cluster's members.
    pub centers: Vec<ClusterCenter>,
    pub counts: Vec<usize>,
    /// Total assignment cost after each iteration.
    pub objective: Vec<f64>,
}

impl Segmentation {
    pub fn num_segments(&self) -> usize {
        self.centers.len()
    }

    /// Build a segmentation from raw labels, recompacting ids in raster
    /// first-appearance order and recomputing member means.
    pub fn from_labels(labels: Grid<u32>, lab: &Image, depth: &DepthMap) -> Result<Self> {
        check_shapes(lab, depth)?;
        if labels.width() != lab.width() || labels.height() != lab.height() {
            return Err(Error::ShapeMismatch(
                "label grid size differs from image".into(),
            ));
        }
        let (labels, k) = compact_labels(&labels);
        let (centers, counts) = member_means(&labels, k, lab, depth);
        Ok(Self {
            labels,
            centers,
            counts,
            objective: Vec::new(),
        })
    }

    /// Pixels whose right or lower neighbor belongs to another segment.
    pub fn boundaries(&self) -> Grid<bool> {
        let (w, h) = (self.labels.width(), self.labels.height());
        Grid::from_fn(w, h, |x, y| {
            let l = *self.labels.get(x, y);
            (x + 1 < w && *self.labels.get(x + 1, y) != l)
                || (y + 1 < h && *self.labels.get(x, y + 1) != l)
        })
    }
}

fn check_shapes(image: &Image, depth: &DepthMap) -> Result<()> {
    if image.width() != depth.width() || image.height() != depth.height() {
        return Err(Error::ShapeMismatch(format!(
            "image is {}x{} but depth is {}x{}",
            image.width(),
            image.height(),
            depth.width(),
            depth.height()
        )));
    }
    Ok(())
}

fn compact_labels(labels: &Grid<u32>) -> (Grid<u32>, usize) {
    let mut remap = std::collections::HashMap::new();
    let out = labels.map(|&l| {
        let next = remap.len() as u32;
        *remap.entry(l).or_insert(next)
    });
    (out, remap.len())
}

fn member_means(
    labels: &Grid<u32>,
    k: usize,
    lab: &Image,
    depth: &DepthMap,
) -> (Vec<ClusterCenter>, Vec<usize>) {
    let mut acc = vec![Accum::default(); k];
    let w = labels.width();
    for (i, &l) in labels.as_slice().iter().enumerate() {
        acc[l as usize].add(i % w, i / w, lab, depth);
    }
    let centers = acc
        .iter()
        .map(|a| a.mean().expect("every compacted label has members"))
        .collect();
    (centers, acc.iter().map(|a| a.n).collect())
}

#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    n: usize,
    lab: [f64; 3],
    pos: [f64; 2],
    depth_n: usize,
    depth: f64,
}

impl Accum {
    fn add(&mut self, x: usize, y: usize, lab: &Image, depth: &DepthMap) {
        self.n += 1;
        let px = lab.pixel(x, y);
        for (acc, &v) in self.lab.iter_mut().zip(px) {
            *acc += v as f64;
        }
        self.pos[0] += x as f64;
        self.pos[1] += y as f64;
        if let Some(d) = depth.get(x, y) {
            self.depth_n += 1;
            self.depth += d;
        }
    }

    fn merge(mut self, o: &Accum) -> Self {
        self.n += o.n;
        for c in 0..3 {
            self.lab[c] += o.lab[c];
        }
        self.pos[0] += o.pos[0];
        self.pos[1] += o.pos[1];
        self.depth_n += o.depth_n;
        self.depth += o.depth;
        self
    }

    fn mean(&self) -> Option<ClusterCenter> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        Some(ClusterCenter {
            lab: [self.lab[0] / n, self.lab[1] / n, self.lab[2] / n],
            pos: [self.pos[0] / n, self.pos[1] / n],
            depth: (self.depth_n > 0).then(|| self.depth / self.depth_n as f64),
        })
    }
}

/// Weighted 3D-SLIC distance between a center and a pixel feature.
#[inline]
pub fn slic_distance(
    params: &SlicParams,
    center: &ClusterCenter,
    lab: &[f32],
    x: f64,
    y: f64,
    depth: Option<f64>,
) -> f64 {
    let dl = center.lab[0] - lab[0] as f64;
    let da = center.lab[1] - lab[1] as f64;
    let db = center.lab[2] - lab[2] as f64;
    let color = (dl * dl + da * da + db * db).sqrt();
    let dx = center.pos[0] - x;
    let dy = center.pos[1] - y;
    let spatial = (dx * dx + dy * dy).sqrt();
    let depth_term = match (center.depth, depth) {
        (Some(c), Some(d)) => (c - d).abs(),
        _ => 0.0,
    };
    params.lambda_lab * color + params.lambda_depth * depth_term + params.lambda_pix * spatial
}

/// Seed positions on the regular grid: `floor(W/s) × floor(H/s)` centers.
pub fn seed_positions(width: usize, height: usize, step: usize) -> Result<Vec<[f64; 2]>> {
    let nx = width / step;
    let ny = height / step;
    if nx == 0 || ny == 0 {
        return Err(Error::invalid(format!(
            "a {width}x{height} image holds no {step}-pixel grid cell"
        )));
    }
    let sx = width as f64 / nx as f64;
    let sy = height as f64 / ny as f64;
    let mut seeds = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            seeds.push([(i as f64 + 0.5) * sx - 0.5, (j as f64 + 0.5) * sy - 0.5]);
        }
    }
    Ok(seeds)
}

struct Buckets {
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

impl Buckets {
    fn build(centers: &[Option<ClusterCenter>], width: usize, height: usize, step: usize) -> Self {
        let cols = width.div_ceil(step);
        let rows = height.div_ceil(step);
        let mut cells = vec![Vec::new(); cols * rows];
        let cell = step as f64;
        for (k, c) in centers.iter().enumerate() {
            if let Some(c) = c {
                let cx = ((c.pos[0] / cell).floor().max(0.0) as usize).min(cols - 1);
                let cy = ((c.pos[1] / cell).floor().max(0.0) as usize).min(rows - 1);
                cells[cy * cols + cx].push(k as u32);
            }
        }
        Self {
            cell,
            cols,
            rows,
            cells,
        }
    }

    /// Centers whose bucket may lie within `2s` of `(x, y)`.
    fn near(&self, x: f64, y: f64) -> impl Iterator<Item = u32> + '_ {
        let cx = (x / self.cell).floor() as isize;
        let cy = (y / self.cell).floor() as isize;
        let (cols, rows) = (self.cols as isize, self.rows as isize);
        (cy - 2..=cy + 2)
            .filter(move |r| *r >= 0 && *r < rows)
            .flat_map(move |r| {
                (cx - 2..=cx + 2)
                    .filter(move |c| *c >= 0 && *c < cols)
                    .map(move |c| (r * cols + c) as usize)
            })
            .flat_map(move |i| self.cells[i].iter().copied())
    }
}

fn center_features(lab: &Image, depth: &DepthMap, pos: [f64; 2]) -> ClusterCenter {
    let x = (pos[0].round().max(0.0) as usize).min(lab.width() - 1);
    let y = (pos[1].round().max(0.0) as usize).min(lab.height() - 1);
    let px = lab.pixel(x, y);
    ClusterCenter {
        lab: [px[0] as f64, px[1] as f64, px[2] as f64],
        pos,
        depth: depth.get(x, y),
    }
}

fn blend(old: &ClusterCenter, new: &ClusterCenter, t: f64) -> ClusterCenter {
    let mix = |a: f64, b: f64| a + t * (b - a);
    ClusterCenter {
        lab: [
            mix(old.lab[0], new.lab[0]),
            mix(old.lab[1], new.lab[1]),
            mix(old.lab[2], new.lab[2]),
        ],
        pos: [mix(old.pos[0], new.pos[0]), mix(old.pos[1], new.pos[1])],
        depth: match (old.depth, new.depth) {
            (Some(a), Some(b)) => Some(mix(a, b)),
            (a, b) => {
                if t >= 1.0 {
                    b
                } else {
                    a
                }
            }
        },
    }
}

/// Cluster a LAB image (other color spaces are converted) together with a
/// depth map into superpixels.
pub fn slic3d(image: &Image, depth: &DepthMap, params: &SlicParams) -> Result<Segmentation> {
    params.validate()?;
    check_shapes(image, depth)?;
    let lab = if image.space() == ColorSpace::Lab {
        image.clone()
    } else {
        image.to_lab()?
    };
    let (w, h) = (lab.width(), lab.height());
    let seeds = seed_positions(w, h, params.step)?;
    let mut centers: Vec<Option<ClusterCenter>> = seeds
        .iter()
        .map(|&p| Some(center_features(&lab, depth, p)))
        .collect();
    let mut labels: Vec<u32> = vec![u32::MAX; w * h];
    let reach = 2.0 * params.step as f64;
    let mut objective = Vec::with_capacity(params.max_iter);

    for _ in 0..params.max_iter {
        // assignment
        let buckets = Buckets::build(&centers, w, h, params.step);
        let assign: Vec<(u32, f64)> = labels
            .par_iter()
            .enumerate()
            .map(|(i, &current)| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let feat = lab.pixel(i % w, i / w);
                let d = depth.get_index(i);
                let mut best = (u32::MAX, f64::INFINITY);
                if current != u32::MAX {
                    if let Some(c) = &centers[current as usize] {
                        best = (current, slic_distance(params, c, feat, x, y, d));
                    }
                }
                let mut consider = |k: u32| {
                    let c = centers[k as usize]
                        .as_ref()
                        .expect("bucketed centers are live");
                    if (c.pos[0] - x).abs() > reach || (c.pos[1] - y).abs() > reach {
                        return;
                    }
                    let cost = slic_distance(params, c, feat, x, y, d);
                    if cost < best.1 || (cost == best.1 && k < best.0 && best.0 != current) {
                        best = (k, cost);
                    }
                };
                buckets.near(x, y).for_each(&mut consider);
                if best.0 == u32::MAX {
                    for k in 0..centers.len() as u32 {
                        if let Some(c) = &centers[k as usize] {
                            let cost = slic_distance(params, c, feat, x, y, d);
                            if cost < best.1 {
                                best = (k, cost);
                            }
                        }
                    }
                }
                best
            })
            .collect();
        for (l, (k, _)) in labels.iter_mut().zip(&assign) {
            *l = *k;
        }

        // update
        let k = centers.len();
        let acc = labels
            .par_iter()
            .enumerate()
            .fold(
                || vec![Accum::default(); k],
                |mut acc, (i, &l)| {
                    acc[l as usize].add(i % w, i / w, &lab, depth);
                    acc
                },
            )
            .reduce(
                || vec![Accum::default(); k],
                |a, b| a.iter().zip(&b).map(|(x, y)| x.merge(y)).collect(),
            );
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            members[l as usize].push(i);
        }
        let cluster_cost = |c: &ClusterCenter, m: &[usize]| -> f64 {
            m.iter()
                .map(|&i| {
                    slic_distance(
                        params,
                        c,
                        lab.pixel(i % w, i / w),
                        (i % w) as f64,
                        (i / w) as f64,
                        depth.get_index(i),
                    )
                })
                .sum()
        };
        let updated: Vec<(Option<ClusterCenter>, f64)> = (0..k)
            .into_par_iter()
            .map(|j| {
                let Some(old) = centers[j] else {
                    return (None, 0.0);
                };
                let Some(mean) = acc[j].mean() else {
                    return (None, 0.0);
                };
                let old_cost = cluster_cost(&old, &members[j]);
                let mut t = 1.0;
                for _ in 0..12 {
                    let cand = blend(&old, &mean, t);
                    let cost = cluster_cost(&cand, &members[j]);
                    if cost <= old_cost {
                        return (Some(cand), cost);
                    }
                    t *= 0.5;
                }
                (Some(old), old_cost)
            })
            .collect();
        let mut total = 0.0;
        for (c, (u, cost)) in centers.iter_mut().zip(updated) {
            *c = u;
            total += cost;
        }
        objective.push(total);
    }

    let (labels, k) = compact_labels(&Grid::from_vec(w, h, labels)?);
    let (centers, counts) = member_means(&labels, k, &lab, depth);
    Ok(Segmentation {
        labels,
        centers,
        counts,
        objective,
    })
}

/// Per-segment log-depth summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    /// Pixel indices (row-major) of the segment.
    pub members: Vec<usize>,
    pub valid_count: usize,
    /// Mean of `ln d` over valid members; `None` flags a segment without depth.
    pub mean_log_depth: Option<f64>,
}

pub fn segment_stats(seg: &Segmentation, depth: &DepthMap) -> Result<Vec<SegmentStats>> {
    if seg.labels.width() != depth.width() || seg.labels.height() != depth.height() {
        return Err(Error::ShapeMismatch(
            "segmentation and depth sizes differ".into(),
        ));
    }
    let mut stats: Vec<(Vec<usize>, usize, f64)> = vec![(Vec::new(), 0, 0.0); seg.num_segments()];
    for (i, &l) in seg.labels.as_slice().iter().enumerate() {
        let s = &mut stats[l as usize];
        s.0.push(i);
        if let Some(d) = depth.get_index(i) {
            s.1 += 1;
            s.2 += d.ln();
        }
    }
    Ok(stats
        .into_iter()
        .map(|(members, n, sum)| SegmentStats {
            members,
            valid_count: n,
            mean_log_depth: (n > 0).then(|| sum / n as f64),
        })
        .collect())
}
