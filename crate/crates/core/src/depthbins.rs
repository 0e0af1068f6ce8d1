//! Depth output decoders.
//!
//! The main representation is a proportional bin codec: `N` depth bins form a
//! geometric sequence between `d_min` and `d_max` and a pixel's depth is the
//! softmax-weighted mean of the bins. With near-uniform logits the decoded
//! depth approaches `(d_max − d_min) / (ln d_max − ln d_min)` as `N` grows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub d_min: f64,
    pub d_max: f64,
    pub bins: usize,
    /// Reference focal length (px) the bins are expressed for.
    pub f_base: f64,
}

impl BinSpec {
    pub fn new(d_min: f64, d_max: f64, bins: usize, f_base: f64) -> Result<Self> {
        let spec = Self {
            d_min,
            d_max,
            bins,
            f_base,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bin range must satisfy 0 < d_min < d_max, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if self.bins < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least two bins, got {}",
                self.bins
            )));
        }
        if !(self.f_base > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "f_base must be positive, got {}",
                self.f_base
            )));
        }
        Ok(())
    }
}

/// Bin depths `d_min·(d_max/d_min)^(i/(N−1))` scaled by `fx / f_base`.
pub fn bin_centers(spec: &BinSpec, fx: f64) -> Vec<f64> {
    let n = spec.bins;
    let ratio = spec.d_max / spec.d_min;
    let scale = fx / spec.f_base;
    (0..n)
        .map(|i| {
            let d = if i + 1 == n {
                spec.d_max
            } else {
                spec.d_min * ratio.powf(i as f64 / (n - 1) as f64)
            };
            d * scale
        })
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax-weighted mean of precomputed bin centers.
pub fn decode_with_centers(centers: &[f64], logits: &[f64]) -> Result<f64> {
    if centers.len() != logits.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {} bins",
            logits.len(),
            centers.len()
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("bin logits must be finite"));
    }
    let weights = softmax(logits);
    let d: f64 = weights.iter().zip(centers).map(|(w, c)| w * c).sum();
    // Guard the interval against summation round-off.
    Ok(d.clamp(centers[0], centers[centers.len() - 1]))
}

pub fn decode(spec: &BinSpec, fx: f64, logits: &[f64]) -> Result<f64> {
    decode_with_centers(&bin_centers(spec, fx), logits)
}

/// Large-`N` limit of the mean of the bin centers.
pub fn initial_mean(spec: &BinSpec) -> f64 {
    let log_ratio = spec.d_max.ln() - spec.d_min.ln();
    if log_ratio < 1e-12 {
        return spec.d_min;
    }
    (spec.d_max - spec.d_min) / log_ratio
}

/// Arithmetic mean of the (unscaled) bin centers.
pub fn empirical_mean(spec: &BinSpec) -> f64 {
    let centers = bin_centers(spec, spec.f_base);
    centers.iter().sum::<f64>() / centers.len() as f64
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Single-channel inverse-depth decode:
/// `1/d = 1/d_max + sigmoid(x)·(1/d_min − 1/d_max)`.
pub fn sigmoid_decode_baseline(x: f64, d_min: f64, d_max: f64) -> f64 {
    let inv = 1.0 / d_max + sigmoid(x) * (1.0 / d_min - 1.0 / d_max);
    1.0 / inv
}

/// Camera-aware direct depth regression `(1/σ(z_o) − 1)·fx/fx0`, capped at `d_max`.
pub fn camera_aware_z(z_o: f64, fx: f64, fx0: f64, d_max: f64) -> f64 {
    // 1/σ(x) − 1 = e^{−x}
    ((-z_o).exp() * fx / fx0).min(d_max)
}

/// Negative Laplacian log-likelihood of `log d` around `log d_pseudo`,
/// parameterized by `log σ`.
pub fn distill_nll(d: f64, d_pseudo: f64, log_sigma: f64) -> Result<f64> {
    if !(d > 0.0 && d_pseudo > 0.0) {
        return Err(Error::invalid(format!(
            "depths must be positive, got d = {d}, d_pseudo = {d_pseudo}"
        )));
    }
    if !log_sigma.is_finite() {
        return Err(Error::invalid("log sigma must be finite"));
    }
    let residual = (d.ln() - d_pseudo.ln()).abs();
    Ok(residual * (-log_sigma).exp() + log_sigma)
}

/// A `H × W × N` tensor of raw bin scores, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor {
    pub height: usize,
    pub width: usize,
    pub bins: usize,
    pub data: Vec<f32>,
}

impl LogitTensor {
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * self.bins;
        &self.data[start..start + self.bins]
    }
}

/// Decode a full logit tensor into a z-depth map.
pub fn decode_map(
    spec: &BinSpec,
    fx: f64,
    logits: &LogitTensor,
) -> Result<crate::warprecon::DepthMap> {
    spec.validate()?;
    if logits.bins != spec.bins {
        return Err(Error::ShapeMismatch(format!(
            "tensor has {} channels, spec has {} bins",
            logits.bins, spec.bins
        )));
    }
    let centers = bin_centers(spec, fx);
    let mut values = Vec::with_capacity(logits.width * logits.height);
    let mut buf = vec![0.0; spec.bins];
    for y in 0..logits.height {
        for x in 0..logits.width {
            for (b, &l) in buf.iter_mut().zip(logits.pixel(x, y)) {
                *b = l as f64;
            }
            values.push(decode_with_centers(&centers, &buf)?);
        }
    }
    crate::warprecon::DepthMap::dense(logits.width, logits.height, values)
}
