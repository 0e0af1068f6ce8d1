//! Synthetic scenes with exact geometry: a textured ground plane with boxes,
//! seen from a short camera path. Used as ground truth by tests and the
//! `synth` command.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors3d::roty;
use crate::camgeo::{CameraModel, RigidPose};
use crate::epiflow::FlowField;
use crate::error::{Error, Result};
use crate::io;
use crate::postopt::VoSample;
use crate::warprecon::{synth_static_flow, ColorSpace, DepthMap, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    /// Geometric center in frame-0 camera coordinates (m).
    pub center: [f64; 3],
    /// `[w, h, l]` (m).
    pub dims: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default = "default_albedo")]
    pub albedo: [f32; 3],
}

fn default_albedo() -> [f32; 3] {
    [0.8, 0.2, 0.2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoSpec {
    /// Fraction of valid frame-0 pixels sampled.
    pub coverage: f64,
    /// Standard deviation of the multiplicative log-normal depth noise.
    pub noise: f64,
}

impl Default for VoSpec {
    fn default() -> Self {
        Self {
            coverage: 0.01,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub camera: CameraModel,
    /// Height of the camera above the ground (the plane `y = elevation`).
    #[serde(default = "default_elevation")]
    pub elevation: f64,
    #[serde(default)]
    pub boxes: Vec<SceneBox>,
    /// Transform from frame-0 camera coordinates to each later frame.
    pub poses: Vec<RigidPose>,
    #[serde(default)]
    pub seed: u64,
    /// Depths beyond this are reported invalid.
    #[serde(default = "default_max_depth")]
    pub max_depth: f64,
    #[serde(default)]
    pub vo: VoSpec,
}

fn default_elevation() -> f64 {
    1.65
}

fn default_max_depth() -> f64 {
    80.0
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.elevation > 0.0) {
            return bad(format!(
                "camera elevation must be positive, got {}",
                self.elevation
            ));
        }
        if self.poses.is_empty() {
            return bad("scene needs at least one pose after frame 0".into());
        }
        for (i, p) in self.poses.iter().enumerate() {
            if p.translation().norm() < 1e-9 {
                return bad(format!(
                    "pose {} has no translation; the camera path is degenerate",
                    i + 1
                ));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if b.dims.iter().any(|d| !(*d > 0.0)) {
                return bad(format!("box {i} has non-positive dims {:?}", b.dims));
            }
            if b.center[1] + b.dims[1] / 2.0 > self.elevation + 1e-9 {
                return bad(format!("box {i} extends below the ground plane"));
            }
        }
        if !(0.0..=1.0).contains(&self.vo.coverage) || !(self.vo.noise >= 0.0) {
            return bad(format!("invalid VO settings {:?}", self.vo));
        }
        if !(self.max_depth > 0.0) {
            return bad(format!(
                "max depth must be positive, got {}",
                self.max_depth
            ));
        }
        Ok(())
    }

    /// A street-like scene: a pinhole camera 1.65 m above the ground, boxes
    /// of car and pedestrian size scattered ahead, and one frame moving
    /// 0.8 m forward with a slight turn.
    pub fn street(width: usize, height: usize, seed: u64) -> Self {
        let f = 1.125 * width as f64;
        let camera = CameraModel::Pinhole(crate::camgeo::Pinhole::new(
            f,
            f,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let elevation = 1.65;
        let boxes = (0..10)
            .map(|i| {
                let z = rng.random_range(6.0..45.0);
                let x = rng.random_range(-0.45..0.45) * z * width as f64 / f;
                let dims = if i % 3 == 2 {
                    [0.6, 1.75, 0.8]
                } else {
                    [
                        rng.random_range(1.5..1.9),
                        rng.random_range(1.4..1.7),
                        rng.random_range(3.5..4.6),
                    ]
                };
                SceneBox {
                    center: [x, elevation - dims[1] / 2.0, z],
                    dims,
                    yaw: rng.random_range(-3.1..3.1),
                    albedo: [
                        rng.random_range(0.2..1.0),
                        rng.random_range(0.2..1.0),
                        rng.random_range(0.2..1.0),
                    ],
                }
            })
            .collect();
        let turn = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), 0.01);
        Self {
            camera,
            elevation,
            boxes,
            poses: vec![RigidPose::from_parts(turn, Vector3::new(0.02, 0.0, -0.8))],
            seed,
            max_depth: 80.0,
            vo: VoSpec::default(),
        }
    }

    /// Frame-0 identity followed by the configured poses.
    pub fn frame_poses(&self) -> Vec<RigidPose> {
        std::iter::once(RigidPose::identity())
            .chain(self.poses.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub depth: DepthMap,
    pub image: Image,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub frames: Vec<Frame>,
    /// Frame-0 to frame-`i` pose for every frame (identity first).
    pub poses: Vec<RigidPose>,
    /// Static flow from frame 0 to each later frame.
    pub flows: Vec<FlowField>,
    pub vo: Vec<VoSample>,
}

/// View-independent procedural texture in `[0, 1]`.
struct Texture {
    waves: Vec<(Vector3<f64>, f64, f64)>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let waves = (0..8)
            .map(|_| {
                let dir = Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
                    .normalize();
                let freq = rng.random_range(1.0..12.0);
                (
                    dir * freq,
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.3..1.0),
                )
            })
            .collect();
        Self { waves }
    }

    fn at(&self, p: &Vector3<f64>) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.2).sum();
        let s: f64 = self
            .waves
            .iter()
            .map(|(k, phi, a)| a * (k.dot(p) + phi).sin())
            .sum();
        0.5 + 0.5 * s / total
    }
}

/// Distance along `dir` to the box surface, if the ray hits it.
fn hit_box(origin: &Vector3<f64>, dir: &Vector3<f64>, b: &SceneBox) -> Option<f64> {
    let r = roty(b.yaw);
    let c = Vector3::from(b.center);
    let o = r.transpose() * (origin - c);
    let d = r.transpose() * dir;
    let half = [b.dims[2] / 2.0, b.dims[1] / 2.0, b.dims[0] / 2.0];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a].abs() > half[a] {
                return None;
            }
            continue;
        }
        let ta = (-half[a] - o[a]) / d[a];
        let tb = (half[a] - o[a]) / d[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    if t0 > t1 || t1 <= 0.0 {
        return None;
    }
    Some(if t0 > 0.0 { t0 } else { t1 })
}

const SKY: [f32; 3] = [0.62, 0.75, 0.92];
const GROUND: [f32; 3] = [0.55, 0.52, 0.48];

fn render(spec: &SceneSpec, pose: &RigidPose, tex: &Texture) -> Result<Frame> {
    let cam = &spec.camera;
    let (w, h) = (cam.width(), cam.height());
    let inv = pose.inverse();
    let origin = *inv.translation();
    let rot = *inv.rotation();
    let pixels: Vec<(Option<f64>, [f32; 3])> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let px = Vector2::new((i % w) as f64, (i / w) as f64);
            let ray = match cam.ray(px) {
                Ok(r) => r,
                Err(Error::InvalidArgument(_)) => return Ok((None, [0.0; 3])),
                Err(e) => return Err(e),
            };
            let dir_cam = ray.direction.into_inner();
            let dir = rot * dir_cam;
            let mut best: Option<(f64, [f32; 3])> = None;
            if dir.y > 1e-12 {
                let t = (spec.elevation - origin.y) / dir.y;
                if t > 0.0 {
                    best = Some((t, GROUND));
                }
            }
            for b in &spec.boxes {
                if let Some(t) = hit_box(&origin, &dir, b) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, b.albedo));
                    }
                }
            }
            let Some((t, albedo)) = best else {
                return Ok((None, SKY));
            };
            let shade = (0.35 + 0.65 * tex.at(&(origin + dir * t))) as f32;
            let color = [albedo[0] * shade, albedo[1] * shade, albedo[2] * shade];
            let z = t * dir_cam.z;
            Ok(((z > 0.0 && z <= spec.max_depth).then_some(z), color))
        })
        .collect::<Result<_>>()?;
    let depth = DepthMap::from_values(w, h, pixels.iter().map(|p| p.0.unwrap_or(0.0)).collect())?;
    let data = pixels.iter().flat_map(|p| p.1).collect();
    Ok(Frame {
        depth,
        image: Image::new(w, h, ColorSpace::Rgb, data)?,
    })
}

/// Sample `coverage` of the valid pixels of `depth` as VO points.
pub fn sample_vo(depth: &DepthMap, coverage: f64, noise: f64, seed: u64) -> Vec<VoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let valid: Vec<usize> = (0..depth.len())
        .filter(|&i| depth.get_index(i).is_some())
        .collect();
    let n = ((coverage * valid.len() as f64).round() as usize).min(valid.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, valid.len(), n)
        .into_iter()
        .map(|k| valid[k])
        .collect();
    picked.sort_unstable();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let w = depth.width();
    picked
        .into_iter()
        .map(|i| {
            let d = depth.get_index(i).expect("valid pixel");
            let factor = if noise > 0.0 {
                (noise * normal.sample(&mut rng)).exp()
            } else {
                1.0
            };
            VoSample {
                u: (i % w) as f64,
                v: (i / w) as f64,
                depth: d * factor,
            }
        })
        .collect()
}

pub fn synth_scene(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tex = Texture::new(&mut rng);
    let poses = spec.frame_poses();
    let frames = poses
        .iter()
        .map(|p| render(spec, p, &tex))
        .collect::<Result<Vec<_>>>()?;
    let flows = poses[1..]
        .iter()
        .map(|p| synth_static_flow(&frames[0].depth, &spec.camera, &spec.camera, p))
        .collect::<Result<Vec<_>>>()?;
    let vo = sample_vo(&frames[0].depth, spec.vo.coverage, spec.vo.noise, spec.seed);
    Ok(SynthScene {
        frames,
        poses,
        flows,
        vo,
    })
}

/// Write `depth_i.png`, `rgb_i.png`, `flow_0i.flo`, `poses.txt`, `vo.csv` and
/// `camera.json` into `dir`. VO depths are quantized like the depth PNGs.
pub fn write_scene(
    dir: &Path,
    spec: &SceneSpec,
    scene: &SynthScene,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (i, f) in scene.frames.iter().enumerate() {
        let p = dir.join(format!("depth_{i}.png"));
        io::write_depth_png(&p, &f.depth)?;
        written.push(p);
        let p = dir.join(format!("rgb_{i}.png"));
        io::write_image(&p, &f.image)?;
        written.push(p);
    }
    for (i, flow) in scene.flows.iter().enumerate() {
        let p = dir.join(format!("flow_0{}.flo", i + 1));
        io::write_flo(&p, flow)?;
        written.push(p);
    }
    let p = dir.join("poses.txt");
    io::write_poses(&p, &scene.poses)?;
    written.push(p);
    // VO depths on the PNG grid, so noise-free samples agree with depth_0.png exactly
    let vo: Vec<VoSample> = scene
        .vo
        .iter()
        .map(|s| VoSample {
            depth: (s.depth * io::DEPTH_PNG_SCALE)
                .round()
                .clamp(1.0, u16::MAX as f64)
                / io::DEPTH_PNG_SCALE,
            ..*s
        })
        .collect();
    let p = dir.join("vo.csv");
    io::write_vo_csv(&p, &vo)?;
    written.push(p);
    let p = dir.join("camera.json");
    io::write_json(&p, &spec.camera)?;
    written.push(p);
    Ok(written)
}
