//! Glue shared by the CLI and end-to-end tests: train/test splitting,
//! held-out pose correction and evaluation reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose, PoseDelta, Trajectory};
use crate::error::{Error, Result};
use crate::eval::{evaluate_trajectory, mask_iou, psnr, ssim, PoseMetrics};
use crate::odometry::{apply_noise, chain_poses, Frame, NoiseSpec, TimeMap};
use crate::raster::{render, RasterConfig};
use crate::scene::GaussianScene;
use crate::trainer::{threshold_velocity, TrainInput};

/// Every `HOLDOUT_EVERY`-th frame, starting at index 0, is held out.
pub const HOLDOUT_EVERY: usize = 4;

/// Returns `(train, test)` index lists.
pub fn holdout_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| i % HOLDOUT_EVERY != 0)
}

/// Provider frames arranged for training.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub input: TrainInput,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Chained provider poses for every frame.
    pub provider: Trajectory,
}

/// Applies `noise`, chains poses over the whole sequence and selects the
/// training frames. With `holdout` off every frame trains.
pub fn prepare(frames: &[Frame], k: &CameraIntrinsics, noise: &NoiseSpec, holdout: bool) -> Result<Prepared> {
    if frames.len() < 2 {
        return Err(Error::EmptyDataset(format!("need at least 2 frames, got {}", frames.len())));
    }
    let noisy = apply_noise(frames, noise)?;
    let provider = chain_poses(&noisy);
    let (train_idx, test_idx) = if holdout {
        holdout_split(frames.len())
    } else {
        ((0..frames.len()).collect(), Vec::new())
    };
    let ts: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
    let input = TrainInput {
        frames: train_idx.iter().map(|&i| noisy[i].clone()).collect(),
        trajectory: Trajectory::new(train_idx.iter().map(|&i| provider.poses[i]).collect()),
        intrinsics: *k,
        time_map: TimeMap::from_timestamps(&ts),
    };
    Ok(Prepared {
        input,
        train_idx,
        test_idx,
        provider,
    })
}

/// Poses for every frame: refined poses for training frames, and for the
/// others the provider pose carried by the correction learned at the nearest
/// training frame.
pub fn full_trajectory(provider: &Trajectory, train_idx: &[usize], refined: &Trajectory) -> Result<Trajectory> {
    if train_idx.len() != refined.len() {
        return Err(Error::LengthMismatch {
            left: train_idx.len(),
            right: refined.len(),
        });
    }
    if train_idx.is_empty() {
        return Ok(provider.clone());
    }
    let poses = (0..provider.len())
        .map(|i| {
            let j = (0..train_idx.len())
                .min_by_key(|&j| (train_idx[j].abs_diff(i), train_idx[j]))
                .expect("non-empty");
            let src = train_idx[j];
            if src == i {
                return refined.poses[j];
            }
            let correction = refined.poses[j].compose(&provider.poses[src].inverse());
            let mut p = correction.compose(&provider.poses[i]);
            p.timestamp = provider.poses[i].timestamp;
            p
        })
        .collect();
    Ok(Trajectory::new(poses))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub timestamp: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub mask_iou: f64,
}

pub const FRAME_REPORT_HEADER: &str = "index,timestamp,psnr,ssim,mask_iou";

impl FrameReport {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.index, self.timestamp, self.psnr, self.ssim, self.mask_iou)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub ate: Option<f64>,
    pub rpe_t: Option<f64>,
    pub rpe_r: Option<f64>,
    pub mask_iou: f64,
    pub frame_count: usize,
    #[serde(skip)]
    pub frames: Vec<FrameReport>,
}

/// Renders each listed frame at `poses[i]` and scores it against the
/// observed image and motion mask.
pub fn evaluate_views(
    scene: &GaussianScene,
    k: &CameraIntrinsics,
    raster: &RasterConfig,
    time_map: &TimeMap,
    frames: &[Frame],
    poses: &Trajectory,
    indices: &[usize],
) -> Result<Vec<FrameReport>> {
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let f = &frames[i];
        let r = render(scene, &poses.poses[i], &PoseDelta::zero(), k, time_map.normalize(f.timestamp), raster);
        let moving = threshold_velocity(&r.velocity, scene.config.v_thr);
        out.push(FrameReport {
            index: i,
            timestamp: f.timestamp,
            psnr: psnr(&r.color, &f.image)?,
            ssim: ssim(&r.color, &f.image)?,
            mask_iou: mask_iou(&moving, &f.motion_mask)?,
        });
    }
    Ok(out)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Image metrics over `frames`, pose metrics of `estimate` against `gt`.
pub fn build_report(frames: Vec<FrameReport>, estimate: &Trajectory, gt: Option<&Trajectory>) -> Result<EvalReport> {
    let pose: Option<PoseMetrics> = gt.map(|g| evaluate_trajectory(estimate, g)).transpose()?;
    Ok(EvalReport {
        psnr: mean(frames.iter().map(|f| f.psnr)),
        ssim: mean(frames.iter().map(|f| f.ssim)),
        ate: pose.as_ref().map(|p| p.ate_rmse),
        rpe_t: pose.as_ref().map(|p| p.rpe_t),
        rpe_r: pose.as_ref().map(|p| p.rpe_r),
        mask_iou: mean(frames.iter().map(|f| f.mask_iou)),
        frame_count: frames.len(),
        frames,
    })
}

/// Poses at the listed indices.
pub fn select(traj: &Trajectory, idx: &[usize]) -> Trajectory {
    Trajectory::new(idx.iter().map(|&i| traj.poses[i]).collect::<Vec<CameraPose>>())
}

/// Run description stored next to a checkpoint so rendering and evaluation
/// can reproduce the training setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub intrinsics: CameraIntrinsics,
    pub time_map: TimeMap,
    pub frame_count: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Final PSNR per training frame, in `train_indices` order.
    pub final_psnr: Vec<f64>,
}

pub const META_FILE: &str = "run.json";

impl RunMeta {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(&path, e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: RunMeta = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if meta.final_psnr.len() != meta.train_indices.len()
            && !meta.final_psnr.is_empty()
        {
            return Err(Error::format(&path, "final_psnr and train_indices differ in length"));
        }
        Ok(meta)
    }
}
