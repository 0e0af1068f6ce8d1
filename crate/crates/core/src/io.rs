//! File codecs.
//!
//! | data | format |
//! |------|--------|
//! | depth | 16-bit gray PNG holding `round(d·256)`, 0 = invalid; or PFM `f32` |
//! | images | 8/16-bit PNG, values scaled to `[0, 1]` |
//! | flow | Middlebury `.flo` (`PIEH`, `i32` W H, `f32` dx dy pairs) |
//! | bin logits | `BINS`, `u32` H W N, `f32` channel-innermost |
//! | segmentation | `SEG1`, `u32` W H, `u32` ids row-major |
//! | VO samples | CSV `u,v,depth`, header optional |
//! | poses | text, 12 floats per line (row-major 3×4) |
//! | cameras, configs | JSON |
//! | detections | JSON lines |
//! | KITTI labels | whitespace or comma separated, 15 or 16 columns |
//!
//! All binary fields are little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use nalgebra::{Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::anchors3d::{obs_angle, Box2d, DetectionBox};
use crate::camgeo::{CameraModel, RigidPose};
use crate::depthbins::LogitTensor;
use crate::epiflow::FlowField;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::postopt::VoSample;
use crate::warprecon::{ColorSpace, DepthMap, Image};

/// Depth PNG quantization (values per meter).
pub const DEPTH_PNG_SCALE: f64 = 256.0;
/// `.flo` components above this magnitude mark unknown flow.
pub const FLO_UNKNOWN_THRESH: f32 = 1e9;
const FLO_UNKNOWN: f32 = 1e10;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    open(path)?
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Cursor over a little-endian byte buffer.
struct Bytes<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Bytes<'a> {
    fn new(path: &'a Path, data: &'a [u8]) -> Self {
        Self { path, data, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("file truncated while reading {what}"),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4], format: &str) -> Result<()> {
        if self.take(4, "magic")? != magic {
            return Err(Error::format(
                self.path,
                format!(
                    "expected a {format} file starting with {:?}",
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes", self.data.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn decode_png(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::format(path, format!("cannot decode PNG: {e}")))
}

fn save_png<P, C>(path: &Path, buf: &ImageBuffer<P, C>) -> Result<()>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("cannot write PNG: {e}")))
}

fn dims_u32(path: &Path, w: usize, h: usize) -> Result<(u32, u32)> {
    match (u32::try_from(w), u32::try_from(h)) {
        (Ok(w), Ok(h)) => Ok((w, h)),
        _ => Err(Error::format(path, "image too large")),
    }
}

pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let DynamicImage::ImageLuma16(img) = decode_png(path)? else {
        return Err(Error::format(
            path,
            "expected a 16-bit grayscale depth PNG (value = depth·256, 0 = invalid)",
        ));
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / DEPTH_PNG_SCALE)
        .collect();
    DepthMap::from_values(w, h, values)
}

/// Write a depth PNG. Valid depths are kept nonzero; depths beyond the
/// 16-bit range saturate.
pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let (w, h) = dims_u32(path, depth.width(), depth.height())?;
    let mut saturated = 0usize;
    let raw: Vec<u16> = depth
        .iter()
        .map(|d| match d {
            None => 0,
            Some(d) => {
                let q = (d * DEPTH_PNG_SCALE).round();
                if q > u16::MAX as f64 {
                    saturated += 1;
                }
                q.clamp(1.0, u16::MAX as f64) as u16
            }
        })
        .collect();
    if saturated > 0 {
        log::warn!(
            "{}: {saturated} depths exceed the PNG range and were saturated",
            path.display()
        );
    }
    save_png(
        path,
        &ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("sized buffer"),
    )
}

/// Read a one-channel PFM; non-positive or non-finite values are invalid depth.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let data = read_all(path)?;
    // header: "Pf", dims, scale, each terminated by whitespace
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PFM header"));
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(Error::format(
            path,
            format!("expected a grayscale PFM ('Pf'), found {:?}", fields[0]),
        ));
    }
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::format(path, format!("bad PFM header field {s:?}")))
    };
    let (w, h, scale) = (
        parse(&fields[1])? as usize,
        parse(&fields[2])? as usize,
        parse(&fields[3])?,
    );
    let body = &data[pos.min(data.len())..];
    if body.len() != w * h * 4 {
        return Err(Error::format(
            path,
            format!(
                "expected {} bytes of samples, found {}",
                w * h * 4,
                body.len()
            ),
        ));
    }
    let mut out = vec![0f32; w * h];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4 bytes");
        let v = if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        // rows are stored bottom-up
        let (x, y) = (i % w, h - 1 - i / w);
        out[y * w + x] = v;
    }
    Ok((w, h, out))
}

/// Write a one-channel little-endian PFM from top-down rows.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a {width}x{height} PFM",
            values.len()
        )));
    }
    let mut bytes = format!("Pf\n{width} {height}\n-1\n").into_bytes();
    for y in (0..height).rev() {
        for v in &values[y * width..(y + 1) * width] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_all(path, &bytes)
}

pub fn read_depth_pfm(path: &Path) -> Result<DepthMap> {
    let (w, h, v) = read_pfm(path)?;
    DepthMap::from_values(w, h, v.into_iter().map(f64::from).collect())
}

pub fn write_depth_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let v: Vec<f32> = depth.iter().map(|d| d.map_or(0.0, |d| d as f32)).collect();
    write_pfm(path, depth.width(), depth.height(), &v)
}

/// Dispatch on extension: `.pfm` or PNG.
pub fn read_depth(path: &Path) -> Result<DepthMap> {
    if has_ext(path, "pfm") {
        read_depth_pfm(path)
    } else {
        read_depth_png(path)
    }
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    if has_ext(path, "pfm") {
        write_depth_pfm(path, depth)
    } else {
        write_depth_png(path, depth)
    }
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Read a PNG as an RGB (or gray) image with values in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = decode_png(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        Image::new(w, h, ColorSpace::Rgb, img.to_rgb32f().into_raw())
    } else {
        Image::new(w, h, ColorSpace::Gray, img.to_luma32f().into_raw())
    }
}

/// Write an RGB or gray image as an 8-bit PNG.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = dims_u32(path, img.width(), img.height())?;
    let q = |v: &f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    match img.space() {
        ColorSpace::Rgb => {
            let raw = img.data().iter().map(q).collect();
            save_png(
                path,
                &ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(w, h, raw).expect("sized buffer"),
            )
        }
        ColorSpace::Gray => {
            let raw = img.data().iter().map(q).collect();
            save_png(
                path,
                &ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, raw).expect("sized buffer"),
            )
        }
        ColorSpace::Lab => Err(Error::invalid("LAB images cannot be written as PNG")),
    }
}

/// 8-bit mask PNG, 255 where `true`.
pub fn write_mask_png(path: &Path, mask: &Grid<bool>) -> Result<()> {
    let (w, h) = dims_u32(path, mask.width(), mask.height())?;
    let raw = mask
        .as_slice()
        .iter()
        .map(|&m| if m { 255u8 } else { 0 })
        .collect();
    save_png(
        path,
        &ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, raw).expect("sized buffer"),
    )
}

pub fn read_mask_png(path: &Path) -> Result<Grid<bool>> {
    let img = decode_png(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Grid::from_vec(w, h, img.into_raw().into_iter().map(|v| v >= 128).collect())
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let data = read_all(path)?;
    let mut b = Bytes::new(path, &data);
    b.magic(b"PIEH", ".flo")?;
    let w = b.i32("width")?;
    let h = b.i32("height")?;
    if w < 0 || h < 0 {
        return Err(Error::format(path, format!("negative flow size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let mut vectors = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let dx = b.f32("flow")?;
        let dy = b.f32("flow")?;
        let unknown = !(dx.abs() < FLO_UNKNOWN_THRESH && dy.abs() < FLO_UNKNOWN_THRESH);
        vectors.push((!unknown).then(|| Vector2::new(dx as f64, dy as f64)));
    }
    b.finish()?;
    Ok(FlowField::new(Grid::from_vec(w, h, vectors)?))
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let mut bytes = b"PIEH".to_vec();
    bytes.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    bytes.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for v in flow.vectors.as_slice() {
        let (dx, dy) = v.map_or((FLO_UNKNOWN, FLO_UNKNOWN), |v| (v.x as f32, v.y as f32));
        bytes.extend_from_slice(&dx.to_le_bytes());
        bytes.extend_from_slice(&dy.to_le_bytes());
    }
    write_all(path, &bytes)
}

pub fn read_bins(path: &Path) -> Result<LogitTensor> {
    let data = read_all(path)?;
    let mut b = Bytes::new(path, &data);
    b.magic(b"BINS", "bin-logit")?;
    let height = b.u32("height")? as usize;
    let width = b.u32("width")? as usize;
    let bins = b.u32("bin count")? as usize;
    let n = height * width * bins;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(b.f32("logits")?);
    }
    b.finish()?;
    Ok(LogitTensor {
        height,
        width,
        bins,
        data: values,
    })
}

pub fn write_bins(path: &Path, t: &LogitTensor) -> Result<()> {
    if t.data.len() != t.height * t.width * t.bins {
        return Err(Error::ShapeMismatch(
            "logit tensor size disagrees with its header".into(),
        ));
    }
    let mut bytes = b"BINS".to_vec();
    for v in [t.height, t.width, t.bins] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &t.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_all(path, &bytes)
}

pub fn read_seg(path: &Path) -> Result<Grid<u32>> {
    let data = read_all(path)?;
    let mut b = Bytes::new(path, &data);
    b.magic(b"SEG1", "segmentation")?;
    let w = b.u32("width")? as usize;
    let h = b.u32("height")? as usize;
    let mut ids = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        ids.push(b.u32("ids")?);
    }
    b.finish()?;
    Grid::from_vec(w, h, ids)
}

pub fn write_seg(path: &Path, labels: &Grid<u32>) -> Result<()> {
    let mut bytes = b"SEG1".to_vec();
    bytes.extend_from_slice(&(labels.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(labels.height() as u32).to_le_bytes());
    for id in labels.as_slice() {
        bytes.extend_from_slice(&id.to_le_bytes());
    }
    write_all(path, &bytes)
}

pub fn read_vo_csv(path: &Path) -> Result<Vec<VoSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, format!("CSV error: {e}")))?;
        if rec.len() != 3 {
            return Err(Error::format(
                path,
                format!("line {}: expected u,v,depth", i + 1),
            ));
        }
        let nums: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match nums {
            Ok(n) => out.push(VoSample {
                u: n[0],
                v: n[1],
                depth: n[2],
            }),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::format(
                    path,
                    format!("line {}: non-numeric VO sample", i + 1),
                ));
            }
        }
    }
    Ok(out)
}

pub fn write_vo_csv(path: &Path, samples: &[VoSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| Error::format(path, format!("CSV error: {e}"));
    w.write_record(["u", "v", "depth"]).map_err(csv_err)?;
    for s in samples {
        w.write_record([s.u.to_string(), s.v.to_string(), s.depth.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<RigidPose>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse).collect();
        let vals = vals
            .map_err(|_| Error::format(path, format!("line {}: non-numeric pose entry", i + 1)))?;
        if vals.len() != 12 {
            return Err(Error::format(
                path,
                format!(
                    "line {}: expected 12 values (row-major 3x4), found {}",
                    i + 1,
                    vals.len()
                ),
            ));
        }
        out.push(
            RigidPose::from_row_major(&vals)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_poses(path: &Path, poses: &[RigidPose]) -> Result<()> {
    let mut text = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major().iter().map(f64::to_string).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    write_all(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| Error::format(path, format!("invalid JSON: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, format!("cannot serialize: {e}")))?;
    write_all(path, (text + "\n").as_bytes())
}

pub fn read_camera(path: &Path) -> Result<CameraModel> {
    let cam: CameraModel = read_json(path)?;
    cam.validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(cam)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(
            &serde_json::to_string(item)
                .map_err(|e| Error::format(path, format!("cannot serialize: {e}")))?,
        );
        text.push('\n');
    }
    write_all(path, text.as_bytes())
}

/// Parse KITTI object labels. Columns: type, truncation, occlusion, alpha,
/// x1 y1 x2 y2, h w l, x y z (bottom center), rotation_y, optional score.
/// `DontCare` rows are skipped; the 3D center is moved to the box middle.
pub fn parse_kitti_labels(path: &Path, text: &str) -> Result<Vec<DetectionBox>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.is_empty() || fields[0] == "DontCare" {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err(Error::format(
                path,
                format!(
                    "line {}: expected 15 or 16 KITTI label columns, found {}",
                    i + 1,
                    fields.len()
                ),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k].parse().map_err(|_| {
                Error::format(
                    path,
                    format!("line {}: column {} is not a number", i + 1, k + 1),
                )
            })
        };
        let (h, w, l) = (num(8)?, num(9)?, num(10)?);
        let center = Vector3::new(num(11)?, num(12)? - h / 2.0, num(13)?);
        let yaw = num(14)?;
        out.push(DetectionBox {
            box2d: Box2d::new(num(4)?, num(5)?, num(6)?, num(7)?),
            alpha: if center.z > 0.0 {
                obs_angle(center.x, center.z, yaw)
            } else {
                num(3)?
            },
            center,
            dims: [w, h, l],
            yaw,
            score: if fields.len() == 16 { num(15)? } else { 1.0 },
            category: fields[0].to_string(),
        });
    }
    Ok(out)
}

pub fn read_kitti_labels(path: &Path) -> Result<Vec<DetectionBox>> {
    let text = String::from_utf8(read_all(path)?)
        .map_err(|_| Error::format(path, "labels are not UTF-8"))?;
    parse_kitti_labels(path, &text)
}

/// Piecewise-linear blue-to-yellow ramp on inverse depth.
pub fn colorize_depth(depth: &DepthMap) -> Image {
    let inv: Vec<f64> = depth.iter().flatten().map(|d| 1.0 / d).collect();
    let lo = inv.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stops = [
        [0.05, 0.03, 0.25],
        [0.55, 0.1, 0.5],
        [0.95, 0.45, 0.1],
        [0.99, 0.95, 0.3],
    ];
    Image::from_fn(depth.width(), depth.height(), ColorSpace::Rgb, |x, y, c| {
        let Some(d) = depth.get(x, y) else { return 0.0 };
        let t = if hi > lo {
            (1.0 / d - lo) / (hi - lo)
        } else {
            0.5
        };
        let s = t * (stops.len() - 1) as f64;
        let k = (s.floor() as usize).min(stops.len() - 2);
        let f = s - k as f64;
        (stops[k][c] * (1.0 - f) + stops[k + 1][c] * f) as f32
    })
}

/// Paint `mask` pixels of an RGB image with `color`.
pub fn overlay(image: &Image, mask: &Grid<bool>, color: [f32; 3]) -> Result<Image> {
    if image.space() != ColorSpace::Rgb {
        return Err(Error::invalid("overlays need an RGB image"));
    }
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(Error::ShapeMismatch("mask and image sizes differ".into()));
    }
    Ok(Image::from_fn(
        image.width(),
        image.height(),
        ColorSpace::Rgb,
        |x, y, c| {
            if *mask.get(x, y) {
                color[c]
            } else {
                image.get(x, y, c)
            }
        },
    ))
}
