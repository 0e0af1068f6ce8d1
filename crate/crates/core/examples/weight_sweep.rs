//! Sweep post-optimization weights on a corrupted synthetic street scene and
//! print the RMSE-log before and after.
//!
//! Usage: `weight_sweep [scene_seed] [vo_noise]`.

use monoprior::depthmetrics::{evaluate, Caps, ScaleMode};
use monoprior::postopt::{post_optimize, ApplyMode, OptWeights, SparseDepth};
use monoprior::slic3d::{slic3d, SlicParams};
use monoprior::synth::{sample_vo, synth_scene, SceneSpec};
use rand::{Rng, SeedableRng};

fn main() -> monoprior::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);
    let noise: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.0);
    let spec = SceneSpec::street(640, 192, seed);
    let scene = synth_scene(&spec)?;
    let gt = &scene.frames[0].depth;
    let image = &scene.frames[0].image;
    let params = SlicParams::default();
    let seg = slic3d(image, gt, &params)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 4);
    let factors: Vec<f64> = (0..seg.num_segments())
        .map(|_| rng.random_range(0.7..1.4))
        .collect();
    let corrupted = gt.map_valid(|i, d| d * factors[seg.labels.as_slice()[i] as usize]);
    let vo = SparseDepth::new(sample_vo(gt, 0.01, noise, seed + 1), 640, 192)?;
    let base = evaluate(&corrupted, gt, ScaleMode::None, Caps::default())?.rmse_log;
    println!(
        "segments {} corrupted rmse_log {base:.4}",
        seg.num_segments()
    );
    for l0 in [0.1, 0.03, 0.01, 0.003, 0.001, 0.0003] {
        for l1 in [1.0, 4.0, 16.0] {
            for l2 in [0.1, 1.0] {
                let w = OptWeights {
                    lambda0: l0,
                    lambda1: l1,
                    lambda2: l2,
                };
                let r = post_optimize(&corrupted, image, &vo, &params, &w, ApplyMode::Additive)?;
                let after = evaluate(&r.depth, gt, ScaleMode::None, Caps::default())?.rmse_log;
                println!(
                    "l0 {l0:<7} l1 {l1:<5} l2 {l2:<4} rmse_log {after:.4} gain {:.1}%",
                    100.0 * (1.0 - after / base)
                );
            }
        }
    }
    Ok(())
}
