//! `monoprior` command-line front end: thin compositions over the library.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use monoprior::anchors3d::{
    collect_anchor_stats, filter_ground, generate_anchors, hillclimb_refine, AnchorSpec,
    DetectionBox, HillClimbMode,
};
use monoprior::camgeo::{CameraModel, RigidPose};
use monoprior::depthbins::{decode_map, BinSpec};
use monoprior::depthmetrics::{evaluate, Caps, ScaleMode};
use monoprior::epiflow::{dynamic_mask, fundamental, FundamentalForm};
use monoprior::groundprior::prior_map;
use monoprior::io;
use monoprior::labelmatch::{build_pseudo_labels, selective_mask, Annotation, CategoryMask};
use monoprior::postopt::{post_optimize, ApplyMode, SparseDepth};
use monoprior::slic3d::slic3d;
use monoprior::synth::{synth_scene, write_scene, SceneSpec};
use monoprior::warprecon::{photometric_loss, warp, DepthMap};

use config::Config;
use report::{ReportFormat, Reporter};

#[derive(Debug, Parser)]
#[command(
    name = "monoprior",
    version,
    about = "Geometric priors, depth post-optimization and evaluation"
)]
struct Cli {
    /// Seed for every random choice; overrides a seed in input specs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
    /// JSON configuration file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dense ground-plane depth prior for a pinhole camera.
    GroundPrior(GroundPriorArgs),
    /// Decode a bin-logit tensor into a depth map.
    DecodeBins(DecodeBinsArgs),
    /// Mark pixels whose flow leaves its epipolar line.
    FlowMask(FlowMaskArgs),
    /// Reconstruct a target frame from a source frame, depth and pose.
    Warp(WarpArgs),
    /// SSIM + L1 photometric loss between two images.
    Photoloss(PhotolossArgs),
    /// 3D-SLIC superpixels from an image and a depth map.
    Slic(SlicArgs),
    /// Segment-wise depth correction from sparse VO depths.
    PostOpt(PostOptArgs),
    /// Depth error metrics against ground truth.
    Eval(EvalArgs),
    /// Anchor templates with depth and orientation statistics from labels.
    AnchorStats(AnchorStatsArgs),
    /// Keep anchors whose back-projection lies near the ground plane.
    AnchorFilter(AnchorFilterArgs),
    /// Refine 3D boxes so their projection fits their 2D box.
    Hillclimb(HillclimbArgs),
    /// Match 3D predictions to 2D annotations and build pseudo labels.
    LabelMatch(LabelMatchArgs),
    /// Render a synthetic scene with depth, images, flow, poses and VO.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct GroundPriorArgs {
    #[arg(long)]
    cam: PathBuf,
    /// Prior depth output (.png or .pfm); rows above the horizon are invalid.
    #[arg(long)]
    out: PathBuf,
    /// Virtual disparity output (.pfm).
    #[arg(long)]
    disparity_out: Option<PathBuf>,
    /// Vertical center-to-ground offset output (.pfm).
    #[arg(long)]
    offset_out: Option<PathBuf>,
    #[arg(long)]
    elevation: Option<f64>,
    #[arg(long)]
    ty: Option<f64>,
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long)]
    object_height: Option<f64>,
}

#[derive(Debug, Args)]
struct DecodeBinsArgs {
    /// Logit tensor ("BINS" header, then H, W, N and f32 scores).
    #[arg(long)]
    bins: PathBuf,
    #[arg(long)]
    cam: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    d_min: Option<f64>,
    #[arg(long)]
    d_max: Option<f64>,
    /// Focal length the bins were trained for (defaults to the camera's fx).
    #[arg(long)]
    f_base: Option<f64>,
}

#[derive(Debug, Args)]
struct FrameArgs {
    /// Pose file: one row-major 3x4 world-to-camera matrix per line.
    #[arg(long)]
    poses: PathBuf,
    /// Index of the second frame; the first is frame 0.
    #[arg(long, default_value_t = 1)]
    frame: usize,
}

#[derive(Debug, Args)]
struct FlowMaskArgs {
    /// Flow from frame 0 to the second frame (.flo).
    #[arg(long)]
    flow: PathBuf,
    #[arg(long)]
    cam: PathBuf,
    /// Camera of the second frame (defaults to --cam).
    #[arg(long)]
    cam1: Option<PathBuf>,
    #[command(flatten)]
    frames: FrameArgs,
    /// Mask output PNG (255 = dynamic).
    #[arg(long)]
    out: PathBuf,
    /// Point-to-line distance threshold (px).
    #[arg(long)]
    threshold: Option<f64>,
    /// Build F as Kᵀ[t]ₓRK instead of K⁻ᵀ[t]ₓRK⁻¹ (reproduction only).
    #[arg(long)]
    verbatim_f: bool,
    /// Image to draw the mask on for inspection.
    #[arg(long, requires = "overlay_out")]
    image: Option<PathBuf>,
    #[arg(long, requires = "image")]
    overlay_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WarpArgs {
    /// Source image (the second frame).
    #[arg(long)]
    src: PathBuf,
    /// Depth of the target frame (frame 0).
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    cam: PathBuf,
    #[command(flatten)]
    frames: FrameArgs,
    #[arg(long)]
    out: PathBuf,
    /// Validity mask output PNG.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PhotolossArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Only pixels set in this mask PNG count.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Debug, Args, Default)]
struct SlicFlags {
    /// Grid interval s (px).
    #[arg(long)]
    step: Option<usize>,
    #[arg(long)]
    lambda_lab: Option<f64>,
    /// Weight per meter of depth difference.
    #[arg(long)]
    lambda_depth: Option<f64>,
    /// Weight per pixel of spatial distance (default 0.5/s).
    #[arg(long)]
    lambda_pix: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Debug, Args)]
struct SlicArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    /// Label output ("SEG1" file).
    #[arg(long)]
    out: PathBuf,
    /// Boundary overlay PNG for inspection.
    #[arg(long)]
    boundaries_out: Option<PathBuf>,
    #[command(flatten)]
    slic: SlicFlags,
}

#[derive(Debug, Args)]
struct PostOptArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Sparse VO depths: CSV `u,v,depth`.
    #[arg(long)]
    vo: PathBuf,
    #[arg(long)]
    cam: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Apply segment corrections as a ratio of log-depths (reproduction only).
    #[arg(long)]
    compat_scale: bool,
    #[command(flatten)]
    slic: SlicFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted depth; repeat together with --gt to evaluate several frames.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// Rescale each prediction by median(gt)/median(pred).
    #[arg(long)]
    median: bool,
    /// Upper depth cap (m).
    #[arg(long)]
    cap: Option<f64>,
    /// Lower depth cap (m).
    #[arg(long)]
    min_depth: Option<f64>,
}

#[derive(Debug, Args)]
struct AnchorStatsArgs {
    /// KITTI label files, or directories of them.
    #[arg(long, required = true)]
    labels: Vec<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Template size `WxH` in pixels; repeatable.
    #[arg(long = "shape", value_parser = parse_shape)]
    shapes: Vec<(f64, f64)>,
    #[arg(long)]
    iou: Option<f64>,
    /// Output JSON list of anchors.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnchorFilterArgs {
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    cam: PathBuf,
    #[arg(long)]
    elevation: Option<f64>,
    /// Allowed distance from the ground plane (m).
    #[arg(long)]
    tol: Option<f64>,
    /// Use this category's priors instead of the pooled ones.
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClimbMode {
    Alpha,
    AlphaZ,
}

#[derive(Debug, Args)]
struct HillclimbArgs {
    /// JSON lines of boxes; each `box2d` is the 2D target for its 3D box.
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    cam: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ClimbMode>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LabelMatchArgs {
    /// JSON lines of 3D predictions.
    #[arg(long)]
    preds: PathBuf,
    /// JSON lines of 2D annotations `{"box2d": [x1,y1,x2,y2], "category": ...}`.
    #[arg(long)]
    annots: PathBuf,
    #[arg(long)]
    cam: PathBuf,
    /// Categories in heatmap channel order.
    #[arg(long, value_delimiter = ',', required = true)]
    categories: Vec<String>,
    /// Categories the 2D dataset annotates; the rest are masked from training.
    #[arg(long, value_delimiter = ',')]
    annotated: Option<Vec<String>>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Per-category heatmap PFM prefix.
    #[arg(long)]
    heatmap_prefix: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene description (JSON); without it a street preset is rendered.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Preset image width.
    #[arg(long, default_value_t = 640, conflicts_with = "spec")]
    width: usize,
    /// Preset image height.
    #[arg(long, default_value_t = 192, conflicts_with = "spec")]
    height: usize,
    /// Fraction of valid pixels sampled as VO points.
    #[arg(long)]
    vo_coverage: Option<f64>,
    /// Log-normal VO noise (standard deviation of ln depth).
    #[arg(long)]
    vo_noise: Option<f64>,
}

fn parse_shape(s: &str) -> Result<(f64, f64), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let (w, h) = (parse(w)?, parse(h)?);
    if w > 0.0 && h > 0.0 {
        Ok((w, h))
    } else {
        Err(format!("template size must be positive, got {s}"))
    }
}

/// Failure category, mapped to the process exit code.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let config = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<monoprior::Error>(),
                Some(monoprior::Error::InvalidConfig(_))
            )
        });
        if config {
            Failure::Usage(e)
        } else {
            Failure::Data(e)
        }
    }
}

impl From<monoprior::Error> for Failure {
    fn from(e: monoprior::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain joined with `: `, skipping causes a message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| {
                Failure::Usage(anyhow!("cannot start {} worker threads: {e}", cli.jobs))
            })?;
    }
    let config = match &cli.config {
        Some(p) => Config::load(p).map_err(Failure::Usage)?,
        None => Config::default(),
    };
    let mut out = Reporter::new(cli.report);
    match cli.command {
        Command::GroundPrior(a) => ground_prior(a, &config, &mut out)?,
        Command::DecodeBins(a) => decode_bins(a, &config, &mut out)?,
        Command::FlowMask(a) => flow_mask(a, &config, &mut out)?,
        Command::Warp(a) => warp_cmd(a, &mut out)?,
        Command::Photoloss(a) => photoloss(a, &config, &mut out)?,
        Command::Slic(a) => slic(a, &config, &mut out)?,
        Command::PostOpt(a) => post_opt(a, &config, &mut out)?,
        Command::Eval(a) => eval(a, &config, &mut out)?,
        Command::AnchorStats(a) => anchor_stats(a, &config, &mut out)?,
        Command::AnchorFilter(a) => anchor_filter(a, &config, &mut out)?,
        Command::Hillclimb(a) => hillclimb(a, &config, &mut out)?,
        Command::LabelMatch(a) => label_match(a, &config, &mut out)?,
        Command::Synth(a) => synth(a, cli.seed, &mut out)?,
    }
    out.finish();
    Ok(())
}

fn camera(path: &Path) -> monoprior::Result<CameraModel> {
    let cam = io::read_camera(path)?;
    cam.validate()?;
    Ok(cam)
}

fn check_size(what: &Path, w: usize, h: usize, cam: &CameraModel) -> anyhow::Result<()> {
    if (w, h) != (cam.width(), cam.height()) {
        bail!(
            "{} is {w}x{h} but the camera is {}x{}",
            what.display(),
            cam.width(),
            cam.height()
        );
    }
    Ok(())
}

/// Relative motion from frame 0 to `frame` for world-to-camera poses.
fn relative_pose(args: &FrameArgs) -> anyhow::Result<RigidPose> {
    let poses = io::read_poses(&args.poses)?;
    if args.frame == 0 || args.frame >= poses.len() {
        bail!(
            "{}: frame {} requested but the file holds frames 0..{}",
            args.poses.display(),
            args.frame,
            poses.len()
        );
    }
    Ok(poses[args.frame].compose(&poses[0].inverse()))
}

fn write_f32_pfm(
    path: &Path,
    w: usize,
    h: usize,
    values: impl Iterator<Item = f64>,
) -> monoprior::Result<()> {
    let v: Vec<f32> = values.map(|x| x as f32).collect();
    io::write_pfm(path, w, h, &v)
}

fn ground_prior(a: GroundPriorArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    let cam = camera(&a.cam)?;
    let mut cfg = config.ground;
    set(&mut cfg.elevation, a.elevation);
    set(&mut cfg.ty, a.ty);
    set(&mut cfg.baseline, a.baseline);
    set(&mut cfg.object_height, a.object_height);
    let prior = prior_map(&cam, &cfg)?;
    let (w, h) = (cam.width(), cam.height());
    let depth = DepthMap::from_options(w, h, prior.depth.as_slice())?;
    io::write_depth(&a.out, &depth)?;
    if let Some(p) = &a.disparity_out {
        write_f32_pfm(p, w, h, prior.disparity.as_slice().iter().copied())?;
    }
    if let Some(p) = &a.offset_out {
        write_f32_pfm(p, w, h, prior.offset.as_slice().iter().copied())?;
    }
    let first_ground_row = (0..h).find(|&y| prior.depth.get(0, y).is_some());
    out.set("ground_rows", json!(first_ground_row.map_or(0, |r| h - r)));
    out.set("first_ground_row", json!(first_ground_row));
    out.set("config", json!(cfg));
    Ok(())
}

fn decode_bins(a: DecodeBinsArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    let cam = camera(&a.cam)?;
    let logits = io::read_bins(&a.bins)?;
    check_size(&a.bins, logits.width, logits.height, &cam)?;
    let c = &config.bins;
    let spec = BinSpec::new(
        a.d_min.unwrap_or(c.d_min),
        a.d_max.unwrap_or(c.d_max),
        logits.bins,
        a.f_base.or(c.f_base).unwrap_or_else(|| cam.fx()),
    )?;
    let depth = decode_map(&spec, cam.fx(), &logits)?;
    io::write_depth(&a.out, &depth)?;
    out.set("bins", json!(spec));
    out.set("valid_pixels", json!(depth.valid_count()));
    Ok(())
}

fn flow_mask(a: FlowMaskArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    let cam0 = camera(&a.cam)?;
    let cam1 = match &a.cam1 {
        Some(p) => camera(p)?,
        None => cam0,
    };
    let flow = io::read_flo(&a.flow)?;
    check_size(&a.flow, flow.width(), flow.height(), &cam0)?;
    let pose = relative_pose(&a.frames)?;
    let form = if a.verbatim_f || config.flow_mask.verbatim_f {
        FundamentalForm::Verbatim
    } else {
        FundamentalForm::Standard
    };
    let threshold = a.threshold.unwrap_or(config.flow_mask.threshold);
    let f = fundamental(&cam0, &cam1, &pose, form)?;
    let mask = dynamic_mask(&f, &flow, threshold)?;
    io::write_mask_png(&a.out, &mask.dynamic)?;
    if let (Some(img), Some(dst)) = (&a.image, &a.overlay_out) {
        let image = io::read_image(img)?;
        io::write_image(dst, &io::overlay(&image, &mask.dynamic, [1.0, 0.1, 0.1])?)?;
    }
    out.set("threshold_px", json!(threshold));
    out.set("dynamic_fraction", json!(mask.dynamic_fraction()));
    out.set(
        "invalid_flow",
        json!(mask.invalid_flow.as_slice().iter().filter(|v| **v).count()),
    );
    out.set("near_epipole", json!(mask.near_epipole));
    Ok(())
}

fn warp_cmd(a: WarpArgs, out: &mut Reporter) -> Result<(), Failure> {
    let cam = camera(&a.cam)?;
    let src = io::read_image(&a.src)?;
    let depth = io::read_depth(&a.depth)?;
    check_size(&a.depth, depth.width(), depth.height(), &cam)?;
    let pose = relative_pose(&a.frames)?;
    let warped = warp(&src, &depth, &cam, &cam, &pose)?;
    io::write_image(&a.out, &warped.image)?;
    if let Some(p) = &a.mask_out {
        io::write_mask_png(p, &warped.valid)?;
    }
    let valid = warped.valid.as_slice().iter().filter(|v| **v).count();
    out.set(
        "valid_fraction",
        json!(valid as f64 / warped.valid.len().max(1) as f64),
    );
    Ok(())
}

fn photoloss(a: PhotolossArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    let img_a = io::read_image(&a.a)?;
    let img_b = io::read_image(&a.b)?;
    let mask = a.mask.as_deref().map(io::read_mask_png).transpose()?;
    let alpha = a.alpha.unwrap_or(config.photoloss.alpha);
    let beta = a.beta.unwrap_or(config.photoloss.beta);
    let loss = photometric_loss(&img_a, &img_b, alpha, beta, mask.as_ref())?;
    out.set("loss", json!(loss.mean));
    out.set("pixels", json!(loss.count));
    out.set("alpha", json!(alpha));
    out.set("beta", json!(beta));
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn slic_params(flags: &SlicFlags, config: &Config) -> monoprior::slic3d::SlicParams {
    let mut p = config.slic.params();
    set(&mut p.step, flags.step);
    set(&mut p.lambda_lab, flags.lambda_lab);
    set(&mut p.lambda_depth, flags.lambda_depth);
    set(&mut p.max_iter, flags.max_iter);
    // the spatial weight follows the grid interval unless pinned
    p.lambda_pix = flags
        .lambda_pix
        .or(config.slic.lambda_pix)
        .unwrap_or(0.5 / p.step.max(1) as f64);
    p
}

fn slic(a: SlicArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    let image = io::read_image(&a.image)?;
    let depth = io::read_depth(&a.depth)?;
    let params = slic_params(&a.slic, config);
    let seg = slic3d(&image, &depth, &params)?;
    io::write_seg(&a.out, &seg.labels)?;
    if let Some(p) = &a.boundaries_out {
        io::write_image(p, &io::overlay(&image, &seg.boundaries(), [1.0, 1.0, 0.0])?)?;
    }
    out.set("segments", json!(seg.num_segments()));
    out.set("iterations", json!(seg.objective.len()));
    out.set("objective", json!(seg.objective.last()));
    out.set("params", json!(params));
    Ok(())
}

fn post_opt(a: PostOptArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    let cam = camera(&a.cam)?;
    let depth = io::read_depth(&a.depth)?;
    check_size(&a.depth, depth.width(), depth.height(), &cam)?;
    let image = io::read_image(&a.image)?;
    check_size(&a.image, image.width(), image.height(), &cam)?;
    let vo = SparseDepth::new(io::read_vo_csv(&a.vo)?, cam.width(), cam.height())
        .with_context(|| format!("{}: VO samples do not fit the image", a.vo.display()))?;
    let mut weights = config.post_opt.weights;
    set(&mut weights.lambda0, a.lambda0);
    set(&mut weights.lambda1, a.lambda1);
    set(&mut weights.lambda2, a.lambda2);
    let mode = if a.compat_scale {
        ApplyMode::Ratio
    } else {
        config.post_opt.apply
    };
    let params = slic_params(&a.slic, config);
    let result = post_optimize(&depth, &image, &vo, &params, &weights, mode)?;
    io::write_depth(&a.out, &result.depth)?;
    out.set("segments", json!(result.segmentation.num_segments()));
    out.set("segments_with_vo", json!(result.segments_with_vo));
    out.set("vo_samples", json!(vo.len()));
    out.set("dropped_vo", json!(result.dropped_vo));
    out.set("kkt_residual", json!(result.kkt_residual));
    out.set("weights", json!(weights));
    out.set("apply", json!(mode));
    Ok(())
}

fn eval(a: EvalArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    if a.pred.len() != a.gt.len() {
        return Err(Failure::Usage(anyhow!(
            "{} predictions for {} ground-truth maps; pass --pred and --gt in pairs",
            a.pred.len(),
            a.gt.len()
        )));
    }
    let caps = Caps {
        min: a.min_depth.unwrap_or(config.eval.min_depth),
        max: a.cap.unwrap_or(config.eval.max_depth),
    };
    let mode = if a.median || config.eval.median {
        ScaleMode::Median
    } else {
        ScaleMode::None
    };
    use rayon::prelude::*;
    let reports = a
        .pred
        .par_iter()
        .zip(a.gt.par_iter())
        .map(|(p, g)| -> anyhow::Result<_> {
            let pred = io::read_depth(p)?;
            let gt = io::read_depth(g)?;
            evaluate(&pred, &gt, mode, caps)
                .with_context(|| format!("evaluating {} against {}", p.display(), g.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if let [r] = reports.as_slice() {
        out.merge(json!(r));
    } else {
        let n = reports.len() as f64;
        let mean = |f: fn(&monoprior::depthmetrics::MetricReport) -> f64| {
            reports.iter().map(f).sum::<f64>() / n
        };
        out.set("frames", json!(reports));
        out.set(
            "mean",
            json!({
                "abs_rel": mean(|r| r.abs_rel),
                "sq_rel": mean(|r| r.sq_rel),
                "rmse": mean(|r| r.rmse),
                "rmse_log": mean(|r| r.rmse_log),
                "delta1": mean(|r| r.delta1),
                "delta2": mean(|r| r.delta2),
                "delta3": mean(|r| r.delta3),
                "silog": mean(|r| r.silog),
            }),
        );
    }
    Ok(())
}

fn label_files(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "txt"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn anchor_stats(a: AnchorStatsArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    let c = &config.anchors;
    let shapes = if a.shapes.is_empty() {
        c.shapes.clone()
    } else {
        a.shapes
    };
    let iou = a.iou.unwrap_or(c.iou);
    let mut labels = Vec::new();
    for f in label_files(&a.labels)? {
        labels.extend(io::read_kitti_labels(&f)?);
    }
    let templates = generate_anchors(
        a.width.unwrap_or(c.width),
        a.height.unwrap_or(c.height),
        a.stride.unwrap_or(c.stride),
        &shapes,
    )?;
    let anchors = collect_anchor_stats(&templates, &labels, iou)?;
    io::write_json(&a.out, &anchors)?;
    out.set("labels", json!(labels.len()));
    out.set("anchors", json!(anchors.len()));
    out.set(
        "anchors_without_match",
        json!(anchors.iter().filter(|a| a.pooled.is_none()).count()),
    );
    Ok(())
}

fn anchor_filter(a: AnchorFilterArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    let cam = camera(&a.cam)?;
    let anchors: Vec<AnchorSpec> = io::read_json(&a.anchors)?;
    let elevation = a.elevation.unwrap_or(config.ground.elevation);
    let tol = a.tol.unwrap_or(config.anchors.tol);
    let split = filter_ground(
        &anchors,
        cam.as_pinhole()?,
        elevation,
        tol,
        a.category.as_deref(),
    )?;
    let kept: Vec<&AnchorSpec> = split.kept.iter().map(|&i| &anchors[i]).collect();
    io::write_json(&a.out, &kept)?;
    out.set("kept", json!(split.kept.len()));
    out.set("dropped", json!(split.dropped.len()));
    out.set("without_prior", json!(split.without_prior.len()));
    Ok(())
}

fn hillclimb(a: HillclimbArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    let cam = camera(&a.cam)?;
    let pin = *cam.as_pinhole()?;
    let boxes: Vec<DetectionBox> = io::read_jsonl(&a.boxes)?;
    let mut cfg = config.hillclimb;
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ClimbMode::Alpha => HillClimbMode::AlphaOnly,
            ClimbMode::AlphaZ => HillClimbMode::AlphaAndZ,
        };
    }
    use rayon::prelude::*;
    let results = boxes
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            hillclimb_refine(&pin, b, &b.box2d, &cfg)
                .with_context(|| format!("{}: box {i}", a.boxes.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let refined: Vec<DetectionBox> = results.iter().map(|r| r.refined.clone()).collect();
    io::write_jsonl(&a.out, &refined)?;
    let before: f64 = results.iter().map(|r| r.trace[0]).sum::<f64>() / results.len().max(1) as f64;
    let after: f64 = results.iter().map(|r| r.iou).sum::<f64>() / results.len().max(1) as f64;
    out.set("boxes", json!(results.len()));
    out.set("mean_iou_before", json!(before));
    out.set("mean_iou_after", json!(after));
    out.set(
        "rejected_candidates",
        json!(results.iter().map(|r| r.rejected).sum::<usize>()),
    );
    Ok(())
}

fn label_match(a: LabelMatchArgs, config: &Config, out: &mut Reporter) -> Result<(), Failure> {
    let cam = camera(&a.cam)?;
    let preds: Vec<DetectionBox> = io::read_jsonl(&a.preds)?;
    let annots: Vec<Annotation> = io::read_jsonl(&a.annots)?;
    let mut cfg = config.label_match;
    set(&mut cfg.eps, a.eps);
    set(&mut cfg.stride, a.stride);
    let pseudo = build_pseudo_labels(&preds, &annots, &cam, &a.categories, &cfg)?;
    io::write_jsonl(&a.out, &pseudo.labels)?;
    if let Some(prefix) = &a.heatmap_prefix {
        for (cat, hm) in pseudo.categories.iter().zip(&pseudo.heatmaps) {
            let mut name = prefix.clone().into_os_string();
            name.push(format!("{cat}.pfm"));
            io::write_pfm(Path::new(&name), hm.width(), hm.height(), hm.as_slice())?;
        }
    }
    out.set("labels", json!(pseudo.labels.len()));
    out.set("removed", json!(pseudo.removed()));
    out.set(
        "unmatched_annots",
        json!(pseudo
            .matching
            .values()
            .map(|m| m.unmatched_annots.len())
            .sum::<usize>()),
    );
    out.set("skipped_outside", json!(pseudo.skipped_outside));
    if let Some(annotated) = &a.annotated {
        let mask = selective_mask(&CategoryMask::new(annotated.iter().cloned()), &a.categories)?;
        out.set(
            "trained_categories",
            json!(a
                .categories
                .iter()
                .zip(&mask)
                .filter(|(_, m)| **m)
                .map(|(c, _)| c)
                .collect::<Vec<_>>()),
        );
    }
    Ok(())
}

fn synth(a: SynthArgs, seed: Option<u64>, out: &mut Reporter) -> Result<(), Failure> {
    let mut spec = match &a.spec {
        Some(p) => io::read_json::<SceneSpec>(p)?,
        None => SceneSpec::street(a.width, a.height, seed.unwrap_or(0)),
    };
    set(&mut spec.seed, seed);
    set(&mut spec.vo.coverage, a.vo_coverage);
    set(&mut spec.vo.noise, a.vo_noise);
    let scene = synth_scene(&spec)?;
    let mut files = write_scene(&a.out_dir, &spec, &scene)?;
    let spec_file = a.out_dir.join("scene.json");
    io::write_json(&spec_file, &spec)?;
    files.push(spec_file);
    out.set("frames", json!(scene.frames.len()));
    out.set("vo_samples", json!(scene.vo.len()));
    out.set(
        "files",
        json!(files
            .iter()
            .map(|f| f.display().to_string())
            .collect::<Vec<_>>()),
    );
    Ok(())
}
