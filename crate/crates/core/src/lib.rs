//! Geometric priors, depth post-optimization and evaluation for monocular
//! perception. Network outputs (dense depth, bin logits, optical flow,
//! detections, sparse odometry depth) are treated as plain inputs.

// `!(x > 0.0)` style checks are deliberate: they reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchors3d;
pub mod camgeo;
pub mod depthbins;
pub mod depthmetrics;
pub mod epiflow;
pub mod error;
pub mod grid;
pub mod groundprior;
pub mod io;
pub mod labelmatch;
pub mod postopt;
pub mod slic3d;
pub mod synth;
pub mod warprecon;

pub use error::{Error, Result};
