use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use dynsplat::camera::{CameraPose, PoseDelta, Trajectory};
use dynsplat::io::{pfm, ply, png, tum};
use dynsplat::odometry::{DiskProvider, OdometryProvider};
use dynsplat::pipeline::{self, build_report, evaluate_views, full_trajectory, prepare, EvalReport, RunMeta};
use dynsplat::raster::{render, render_static_only, RasterConfig};
use dynsplat::scene::split_static_dynamic;
use dynsplat::synth::{self, SceneSpec};
use dynsplat::trainer::{checkpoint, metrics_csv, threshold_velocity, TrainConfig, Trainer};
use dynsplat::Error;

#[derive(Parser)]
#[command(name = "dynsplat", version, about = "Dynamic Gaussian splatting from monocular video with odometry priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic driving sequence to a dataset directory.
    Generate(GenerateArgs),
    /// Initialize from provider depth and train a scene.
    Train(TrainArgs),
    /// Render a trained scene at a pose and timestamp.
    Render(RenderArgs),
    /// Score held-out views and the refined trajectory.
    Eval(EvalArgs),
    /// Write the scene as a PLY file.
    ExportPly(ExportArgs),
    /// Train and evaluate with several motion-loss weights.
    AblateMotionWeight(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Built-in scene: static-street, one-mover or multi-mover.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    preset: Option<String>,
    /// Scene specification TOML.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed for texture jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct TrainOpts {
    /// Training configuration TOML; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `schedule.total_iters`.
    #[arg(long)]
    iters: Option<usize>,
    /// Runs rasterization on one thread for reproducible output.
    #[arg(long)]
    single_threaded: bool,
    /// Trains on every frame instead of holding out every 4th.
    #[arg(long)]
    no_holdout: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (rgb/, depth/, mask/, rel_poses.tum, intrinsics.json).
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    /// Continue from this checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also write a checkpoint every N iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Stop after this many iterations without changing the schedule; the
    /// checkpoint can be resumed.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for color.png, static.png, depth.pfm, velocity.pfm
    /// and velocity_mask.png.
    #[arg(long)]
    out: PathBuf,
    /// Timestamp in seconds.
    #[arg(long)]
    timestamp: f64,
    /// Explicit world-from-camera pose "tx ty tz qx qy qz qw".
    #[arg(long, conflicts_with = "pose_file", allow_hyphen_values = true)]
    pose: Option<String>,
    /// TUM trajectory to look the pose up in by timestamp; defaults to the
    /// checkpoint's refined trajectory.
    #[arg(long)]
    pose_file: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset the checkpoint was trained on.
    #[arg(long)]
    data: PathBuf,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
    /// Ground-truth TUM trajectory; defaults to `<data>/gt_poses.tum` when present.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Per-frame metrics CSV.
    #[arg(long)]
    per_frame: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep only Gaussians below the velocity threshold.
    #[arg(long)]
    static_only: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory for per-weight runs and ablation.csv.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    /// Motion-loss weights to compare.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.5])]
    weights: Vec<f64>,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            3
        } else if e.is_data_error() {
            2
        } else {
            1
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::ExportPly(a) => cmd_export(&a),
        Command::AblateMotionWeight(a) => cmd_ablate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let spec = match (&a.preset, &a.spec) {
        (Some(name), _) => SceneSpec::preset(name)?,
        (None, Some(path)) => SceneSpec::load(path)?,
        (None, None) => return Err(usage("one of --preset or --spec is required")),
    };
    info!("generating {} frames with seed {}", spec.frame_count, a.seed);
    let ds = synth::generate(&spec, a.seed)?;
    synth::export(&ds, &a.out)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

/// Resolved configuration of one training run.
struct RunConfig {
    data: PathBuf,
    out: PathBuf,
    train: TrainConfig,
    holdout: bool,
}

impl RunConfig {
    fn new(data: &Path, out: &Path, opts: &TrainOpts) -> CliResult<Self> {
        let mut train = match &opts.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = opts.seed {
            train.seed = s;
        }
        if let Some(n) = opts.iters {
            train.schedule.total_iters = n;
        }
        train.single_threaded |= opts.single_threaded;
        train.validate()?;
        if !data.is_dir() {
            return Err(Error::io(data, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")).into());
        }
        Ok(Self {
            data: data.to_path_buf(),
            out: out.to_path_buf(),
            train,
            holdout: !opts.no_holdout,
        })
    }
}

struct TrainResult {
    final_train_psnr: f64,
}

fn load_dataset(dir: &Path, require_masks: bool) -> CliResult<(dynsplat::camera::CameraIntrinsics, Vec<dynsplat::odometry::Frame>)> {
    let provider = DiskProvider::new(dir, require_masks);
    Ok((provider.intrinsics()?, provider.frames()?))
}

fn run_training(
    rc: &RunConfig,
    resume: Option<&Path>,
    checkpoint_every: Option<usize>,
    stop_after: Option<usize>,
) -> CliResult<TrainResult> {
    let cfg = &rc.train;
    info!("seed {}", cfg.seed);
    let (k, frames) = load_dataset(&rc.data, cfg.loss.lambda_motion > 0.0)?;
    let prep = prepare(&frames, &k, &cfg.noise, rc.holdout)?;
    info!(
        "{} frames: {} train, {} held out",
        frames.len(),
        prep.train_idx.len(),
        prep.test_idx.len()
    );
    let mut trainer = match resume {
        Some(dir) => {
            let mut t = checkpoint::load(dir, prep.input.clone())?;
            t.cfg.schedule.total_iters = cfg.schedule.total_iters;
            info!("resumed at iteration {}", t.iteration());
            t
        }
        None => Trainer::new(prep.input.clone(), cfg.clone())?,
    };
    info!("{} Gaussians", trainer.scene.len());
    let total = trainer.cfg.schedule.total_iters.min(stop_after.unwrap_or(usize::MAX));
    let every = checkpoint_every.unwrap_or(total).max(1);
    while trainer.iteration() < total {
        let next = ((trainer.iteration() / every + 1) * every).min(total);
        trainer.run(next)?;
        if next < total {
            checkpoint::save(&rc.out, &trainer)?;
            write_metrics(&rc.out, trainer.metrics())?;
        }
    }
    checkpoint::save(&rc.out, &trainer)?;
    if trainer.iteration() < trainer.cfg.schedule.total_iters {
        info!("stopped at iteration {}", trainer.iteration());
    }
    let output = trainer.finish()?;
    write_metrics(&rc.out, &output.metrics)?;
    let meta = RunMeta {
        intrinsics: k,
        time_map: prep.input.time_map,
        frame_count: frames.len(),
        train_indices: prep.train_idx.clone(),
        test_indices: prep.test_idx.clone(),
        final_psnr: output.final_psnr.clone(),
    };
    meta.write(&rc.out)?;
    let mean = output.final_psnr.iter().sum::<f64>() / output.final_psnr.len() as f64;
    info!("final train PSNR {mean:.3} dB, {} Gaussians", output.scene.len());
    if output.skipped_steps > 0 {
        log::warn!("{} steps skipped for non-finite values", output.skipped_steps);
    }
    Ok(TrainResult { final_train_psnr: mean })
}

fn write_metrics(dir: &Path, rows: &[dynsplat::trainer::MetricsRow]) -> CliResult<()> {
    let path = dir.join("metrics.csv");
    std::fs::write(&path, metrics_csv(rows)).map_err(|e| Error::io(&path, e).into())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let rc = RunConfig::new(&a.data, &a.out, &a.opts)?;
    if a.checkpoint_every == Some(0) {
        return Err(usage("--checkpoint-every must be >= 1"));
    }
    run_training(&rc, a.resume.as_deref(), a.checkpoint_every, a.stop_after)?;
    info!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn parse_pose_arg(text: &str, timestamp: f64) -> CliResult<CameraPose> {
    let fields = text.split_whitespace().count();
    if fields != 7 {
        return Err(usage(format!("--pose needs 7 numbers \"tx ty tz qx qy qz qw\", got {fields}")));
    }
    tum::parse_pose(&format!("{timestamp} {text}")).map_err(|m| usage(format!("--pose: {m}")))
}

fn lookup_pose(traj: &Trajectory, timestamp: f64, source: &Path) -> CliResult<CameraPose> {
    traj.poses
        .iter()
        .find(|p| (p.timestamp - timestamp).abs() <= dynsplat::eval::TIMESTAMP_TOLERANCE)
        .copied()
        .ok_or_else(|| Error::format(source, format!("no pose with timestamp {timestamp}")).into())
}

fn cmd_render(a: &RenderArgs) -> CliResult<()> {
    let meta = RunMeta::read(&a.checkpoint)?;
    let scene = ply::read_scene(&a.checkpoint.join(checkpoint::SCENE_FILE))?;
    let cfg = TrainConfig::load(&a.checkpoint.join(checkpoint::CONFIG_FILE))?;
    let pose = match (&a.pose, &a.pose_file) {
        (Some(text), _) => parse_pose_arg(text, a.timestamp)?,
        (None, Some(path)) => lookup_pose(&tum::read_trajectory(path)?, a.timestamp, path)?,
        (None, None) => {
            let path = a.checkpoint.join(checkpoint::TRAJECTORY_FILE);
            lookup_pose(&tum::read_trajectory(&path)?, a.timestamp, &path)?
        }
    };
    let raster: RasterConfig = cfg.raster_config();
    let k = meta.intrinsics;
    let t = meta.time_map.normalize(a.timestamp);
    let full = render(&scene, &pose, &PoseDelta::zero(), &k, t, &raster);
    let stat = render_static_only(&scene, &pose, &PoseDelta::zero(), &k, t, &raster);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    png::write_rgb(&a.out.join("color.png"), &full.color)?;
    png::write_rgb(&a.out.join("static.png"), &stat.color)?;
    pfm::write_pfm(&a.out.join("depth.pfm"), &full.depth)?;
    pfm::write_pfm(&a.out.join("velocity.pfm"), &full.velocity)?;
    png::write_mask(
        &a.out.join("velocity_mask.png"),
        &threshold_velocity(&full.velocity, scene.config.v_thr),
    )?;
    info!("rendered t = {} (normalized {t:.4}) to {}", a.timestamp, a.out.display());
    Ok(())
}

fn evaluate_checkpoint(ckpt: &Path, data: &Path, gt: Option<&Path>) -> CliResult<EvalReport> {
    let meta = RunMeta::read(ckpt)?;
    let cfg = TrainConfig::load(&ckpt.join(checkpoint::CONFIG_FILE))?;
    let scene = ply::read_scene(&ckpt.join(checkpoint::SCENE_FILE))?;
    let refined = tum::read_trajectory(&ckpt.join(checkpoint::TRAJECTORY_FILE))?;
    let masks_present = data.join("mask").is_dir();
    let (k, frames) = load_dataset(data, false)?;
    if frames.len() != meta.frame_count {
        return Err(Error::LengthMismatch {
            left: frames.len(),
            right: meta.frame_count,
        }
        .into());
    }
    if k != meta.intrinsics {
        return Err(Error::ShapeMismatch("dataset intrinsics differ from the checkpoint's".into()).into());
    }
    if !masks_present {
        log::warn!("{} has no mask/ folder; mask IoU is computed against empty masks", data.display());
    }
    let prep = prepare(&frames, &k, &cfg.noise, !meta.test_indices.is_empty())?;
    if prep.train_idx != meta.train_indices {
        return Err(Error::format(ckpt.join(pipeline::META_FILE), "train split does not match the dataset").into());
    }
    let full = full_trajectory(&prep.provider, &prep.train_idx, &refined)?;
    let views = if meta.test_indices.is_empty() {
        &meta.train_indices
    } else {
        &meta.test_indices
    };
    let rows = evaluate_views(&scene, &k, &cfg.raster_config(), &meta.time_map, &frames, &full, views)?;
    let default_gt = data.join("gt_poses.tum");
    let gt_path = gt.map(Path::to_path_buf).or_else(|| default_gt.is_file().then_some(default_gt));
    let gt_traj = gt_path.as_deref().map(tum::read_trajectory).transpose()?;
    if gt_traj.is_none() {
        log::warn!("no ground-truth trajectory; pose metrics omitted");
    }
    Ok(build_report(rows, &refined, gt_traj.as_ref())?)
}

fn write_report(path: &Path, report: &EvalReport) -> CliResult<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::format(path, e.to_string()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e).into())
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let report = evaluate_checkpoint(&a.checkpoint, &a.data, a.gt.as_deref())?;
    write_report(&a.report, &report)?;
    if let Some(path) = &a.per_frame {
        let mut text = String::from(pipeline::FRAME_REPORT_HEADER);
        text.push('\n');
        for f in &report.frames {
            text += &f.csv_line();
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    info!(
        "PSNR {:.3} dB, SSIM {:.4}, mask IoU {:.3} over {} views",
        report.psnr, report.ssim, report.mask_iou, report.frame_count
    );
    if let (Some(ate), Some(t), Some(r)) = (report.ate, report.rpe_t, report.rpe_r) {
        info!("ATE {ate:.5}, RPE_t {t:.4}, RPE_r {r:.4} deg");
    }
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> CliResult<()> {
    let scene = ply::read_scene(&a.checkpoint.join(checkpoint::SCENE_FILE))?;
    let scene = if a.static_only {
        let (ids, _) = split_static_dynamic(&scene);
        scene.subset(&ids)
    } else {
        scene
    };
    ply::write_scene(&a.out, &scene)?;
    info!("wrote {} Gaussians to {}", scene.len(), a.out.display());
    Ok(())
}

const ABLATION_HEADER: &str = "lambda_motion,psnr,ssim,ate,rpe_t,rpe_r,mask_iou,train_psnr";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    if a.weights.is_empty() || a.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(usage("--weights must be non-empty and non-negative"));
    }
    let base = RunConfig::new(&a.data, &a.out, &a.opts)?;
    let mut csv = String::from(ABLATION_HEADER);
    csv.push('\n');
    for &w in &a.weights {
        let out = a.out.join(format!("lambda_motion_{w}"));
        let mut train = base.train.clone();
        train.loss.lambda_motion = w;
        let rc = RunConfig {
            data: base.data.clone(),
            out: out.clone(),
            train,
            holdout: base.holdout,
        };
        info!("lambda_motion = {w}");
        let result = run_training(&rc, None, None, None)?;
        let report = evaluate_checkpoint(&out, &a.data, None)?;
        write_report(&out.join("report.json"), &report)?;
        csv += &format!(
            "{w},{},{},{},{},{},{},{}\n",
            report.psnr,
            report.ssim,
            opt(report.ate),
            opt(report.rpe_t),
            opt(report.rpe_r),
            report.mask_iou,
            result.final_train_psnr
        );
    }
    let path = a.out.join("ablation.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}
