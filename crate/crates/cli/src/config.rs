//! JSON configuration file. Every section and field is optional; missing
//! values fall back to the library defaults and command-line flags override
//! whatever the file sets.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use monoprior::anchors3d::{HillClimbConfig, DEFAULT_GROUND_TOL, DEFAULT_STATS_IOU};
use monoprior::depthmetrics::{DEFAULT_MAX_DEPTH, DEFAULT_MIN_DEPTH};
use monoprior::epiflow::DEFAULT_THRESHOLD;
use monoprior::groundprior::GroundConfig;
use monoprior::labelmatch::PseudoLabelConfig;
use monoprior::postopt::{ApplyMode, OptWeights};
use monoprior::slic3d::SlicParams;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ground: GroundConfig,
    pub bins: BinsSection,
    pub flow_mask: FlowMaskSection,
    pub photoloss: PhotolossSection,
    pub slic: SlicSection,
    pub post_opt: PostOptSection,
    pub eval: EvalSection,
    pub anchors: AnchorsSection,
    pub hillclimb: HillClimbConfig,
    pub label_match: PseudoLabelConfig,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("{}: not a valid configuration file", path.display()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinsSection {
    pub d_min: f64,
    pub d_max: f64,
    /// Defaults to the camera's fx, i.e. no focal-length adaptation.
    pub f_base: Option<f64>,
}

impl Default for BinsSection {
    fn default() -> Self {
        Self {
            d_min: 0.1,
            d_max: 100.0,
            f_base: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowMaskSection {
    pub threshold: f64,
    pub verbatim_f: bool,
}

impl Default for FlowMaskSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            verbatim_f: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotolossSection {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PhotolossSection {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            beta: 0.15,
        }
    }
}

/// SLIC parameters; `lambda_pix` left unset follows `0.5 / step`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicSection {
    pub step: usize,
    pub lambda_lab: f64,
    pub lambda_depth: f64,
    pub lambda_pix: Option<f64>,
    pub max_iter: usize,
}

impl Default for SlicSection {
    fn default() -> Self {
        let p = SlicParams::default();
        Self {
            step: p.step,
            lambda_lab: p.lambda_lab,
            lambda_depth: p.lambda_depth,
            lambda_pix: None,
            max_iter: p.max_iter,
        }
    }
}

impl SlicSection {
    /// Parameters with `lambda_pix` still to be resolved by the caller.
    pub fn params(&self) -> SlicParams {
        SlicParams {
            step: self.step,
            lambda_lab: self.lambda_lab,
            lambda_depth: self.lambda_depth,
            lambda_pix: self.lambda_pix.unwrap_or(0.5 / self.step.max(1) as f64),
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostOptSection {
    pub weights: OptWeights,
    pub apply: ApplyMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub min_depth: f64,
    pub max_depth: f64,
    pub median: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            min_depth: DEFAULT_MIN_DEPTH,
            max_depth: DEFAULT_MAX_DEPTH,
            median: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorsSection {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    /// Template sizes `(w, h)` in pixels.
    pub shapes: Vec<(f64, f64)>,
    pub iou: f64,
    /// Ground tolerance (m).
    pub tol: f64,
}

impl Default for AnchorsSection {
    fn default() -> Self {
        Self {
            width: 1242,
            height: 375,
            stride: 16,
            shapes: vec![(32.0, 32.0), (64.0, 48.0), (128.0, 96.0), (256.0, 160.0)],
            iou: DEFAULT_STATS_IOU,
            tol: DEFAULT_GROUND_TOL,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let c: Config = serde_json::from_str(
            r#"{"slic": {"step": 8}, "post_opt": {"weights": {"lambda0": 0.5}}}"#,
        )
        .unwrap();
        assert_eq!(c.slic.step, 8);
        assert_eq!(c.slic.params().lambda_pix, 0.5 / 8.0);
        assert_eq!(c.post_opt.weights.lambda0, 0.5);
        assert_eq!(c.post_opt.weights.lambda1, OptWeights::default().lambda1);
        assert_eq!(c.eval.max_depth, 80.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"slick": {}}"#).is_err());
        assert!(serde_json::from_str::<Config>(r#"{"eval": {"cap": 50}}"#).is_err());
    }
}
