//! Per-frame pose, depth and motion-mask providers, pose chaining, and scene
//! initialization by lifting depth maps into 3D.

use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::buffer::{ColorImage, Mask, Plane};
use crate::camera::{compose_relative, pixel_to_world, CameraIntrinsics, CameraPose, Trajectory};
use crate::error::{Error, Result};
use crate::io;
use crate::scene::{logit, DynamicGaussian, GaussianScene, SceneConfig};
use crate::sh::rgb_to_dc;
use crate::synth::{frame_name, relative_poses, SyntheticDataset};

/// One timestamped observation with the provider's estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: ColorImage,
    pub timestamp: f64,
    /// Provider depth; values `<= 0` or non-finite are invalid.
    pub depth: Plane,
    /// 1 where the surface is dynamic. Bound to the later frame of each pair.
    pub motion_mask: Mask,
    /// `T_{t→t−1}`; identity for the first frame.
    pub rel_pose: CameraPose,
}

impl Frame {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn valid_depth(&self) -> Mask {
        Mask {
            width: self.depth.width,
            height: self.depth.height,
            data: self.depth.data.iter().map(|&d| d > 0.0 && d.is_finite()).collect(),
        }
    }
}

/// Source of frames sharing one metric scale for depth and translation.
pub trait OdometryProvider {
    fn intrinsics(&self) -> Result<CameraIntrinsics>;
    fn frames(&self) -> Result<Vec<Frame>>;
}

fn default_seed() -> u64 {
    0
}

/// Corruption applied by the oracle provider.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-axis rotation noise on each relative pose, degrees.
    #[serde(default)]
    pub rot_deg: f64,
    /// Per-axis translation noise as a fraction of the step length.
    #[serde(default)]
    pub trans_frac: f64,
    /// Standard deviation of multiplicative depth noise.
    #[serde(default)]
    pub depth_frac: f64,
    /// Probability of flipping each mask bit.
    #[serde(default)]
    pub mask_flip: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("noise.rot_deg", self.rot_deg),
            ("noise.trans_frac", self.trans_frac),
            ("noise.depth_frac", self.depth_frac),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_flip) {
            return Err(Error::InvalidConfig(format!(
                "noise.mask_flip must lie in [0, 1], got {}",
                self.mask_flip
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.rot_deg == 0.0 && self.trans_frac == 0.0 && self.depth_frac == 0.0 && self.mask_flip == 0.0
    }
}

/// Ground-truth frames from the synthetic generator, optionally corrupted.
pub fn oracle_provider(ds: &SyntheticDataset, noise: &NoiseSpec) -> Result<Vec<Frame>> {
    if ds.frames.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "oracle provider needs at least 2 frames, got {}",
            ds.frames.len()
        )));
    }
    let rels = relative_poses(&ds.trajectory);
    let clean: Vec<Frame> = ds
        .frames
        .iter()
        .zip(rels)
        .map(|(f, rel)| Frame {
            image: f.image.clone(),
            timestamp: f.timestamp,
            depth: f.depth.clone(),
            motion_mask: f.mask.clone(),
            rel_pose: rel,
        })
        .collect();
    apply_noise(&clean, noise)
}

/// Corrupts relative poses, depth and masks. Rotation noise right-multiplies
/// each relative pose; translation noise scales with the step length.
pub fn apply_noise(frames: &[Frame], noise: &NoiseSpec) -> Result<Vec<Frame>> {
    noise.validate()?;
    if noise.is_zero() {
        return Ok(frames.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let flip = Bernoulli::new(noise.mask_flip).expect("validated rate");
    let mut out = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let mut f = f.clone();
        if i > 0 && (noise.rot_deg > 0.0 || noise.trans_frac > 0.0) {
            let rel = &f.rel_pose;
            let sr = noise.rot_deg.to_radians();
            let w = Vector3::from_fn(|_, _| std_normal.sample(&mut rng) * sr);
            let step = rel.t.norm();
            let dt = Vector3::from_fn(|_, _| std_normal.sample(&mut rng) * noise.trans_frac * step);
            f.rel_pose = CameraPose::new(rel.r * UnitQuaternion::from_scaled_axis(w), rel.t + dt, rel.timestamp);
        }
        if noise.depth_frac > 0.0 {
            for d in f.depth.data.iter_mut() {
                let e = std_normal.sample(&mut rng) * noise.depth_frac;
                if *d > 0.0 {
                    *d *= (1.0 + e).max(0.05);
                }
            }
        }
        if noise.mask_flip > 0.0 {
            for m in f.motion_mask.data.iter_mut() {
                if flip.sample(&mut rng) {
                    *m = !*m;
                }
            }
        }
        out.push(f);
    }
    Ok(out)
}

/// Adapter holding a synthetic dataset and a noise model.
pub struct OracleProvider<'a> {
    pub dataset: &'a SyntheticDataset,
    pub noise: NoiseSpec,
}

impl OdometryProvider for OracleProvider<'_> {
    fn intrinsics(&self) -> Result<CameraIntrinsics> {
        Ok(self.dataset.intrinsics)
    }

    fn frames(&self) -> Result<Vec<Frame>> {
        oracle_provider(self.dataset, &self.noise)
    }
}

/// Frames stored on disk as `rgb/`, `depth/`, `mask/`, `rel_poses.tum` and
/// `intrinsics.json`.
#[derive(Clone, Debug)]
pub struct DiskProvider {
    pub dir: PathBuf,
    /// When false, a missing `mask/` directory yields all-static masks.
    pub require_masks: bool,
}

impl DiskProvider {
    pub fn new(dir: impl Into<PathBuf>, require_masks: bool) -> Self {
        Self {
            dir: dir.into(),
            require_masks,
        }
    }

    fn need(path: PathBuf) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "required by the disk provider"),
            ))
        }
    }

    pub fn read_intrinsics(&self) -> Result<CameraIntrinsics> {
        io::read_intrinsics(&Self::need(self.dir.join("intrinsics.json"))?)
    }
}

impl OdometryProvider for DiskProvider {
    fn intrinsics(&self) -> Result<CameraIntrinsics> {
        self.read_intrinsics()
    }

    fn frames(&self) -> Result<Vec<Frame>> {
        let k = self.read_intrinsics()?;
        let rels = io::tum::read_trajectory(&Self::need(self.dir.join("rel_poses.tum"))?)?;
        if rels.is_empty() {
            return Err(Error::EmptyDataset(format!("{} lists no frames", self.dir.join("rel_poses.tum").display())));
        }
        let rgb_dir = Self::need(self.dir.join("rgb"))?;
        let depth_dir = Self::need(self.dir.join("depth"))?;
        let mask_dir = self.dir.join("mask");
        let masks = if self.require_masks {
            Some(Self::need(mask_dir)?)
        } else {
            mask_dir.exists().then_some(mask_dir)
        };
        let mut frames = Vec::with_capacity(rels.len());
        for (i, rel) in rels.poses.iter().enumerate() {
            let image = io::png::read_rgb(&Self::need(rgb_dir.join(frame_name(i, "png")))?)?;
            let depth = io::pfm::read_pfm(&Self::need(depth_dir.join(frame_name(i, "pfm")))?)?;
            let motion_mask = match &masks {
                Some(d) => io::png::read_mask(&Self::need(d.join(frame_name(i, "png")))?)?,
                None => Mask::new(image.width, image.height),
            };
            if image.width != k.width || image.height != k.height {
                return Err(Error::ShapeMismatch(format!(
                    "frame {i} is {}x{} but intrinsics say {}x{}",
                    image.width, image.height, k.width, k.height
                )));
            }
            if depth.width != k.width || depth.height != k.height || motion_mask.width != k.width || motion_mask.height != k.height {
                return Err(Error::ShapeMismatch(format!("frame {i}: depth or mask size differs from the image")));
            }
            frames.push(Frame {
                image,
                timestamp: rel.timestamp,
                depth,
                motion_mask,
                rel_pose: *rel,
            });
        }
        Ok(frames)
    }
}

/// Absolute poses by chaining the relative poses from the first frame.
pub fn chain_poses(frames: &[Frame]) -> Trajectory {
    let mut poses: Vec<CameraPose> = Vec::with_capacity(frames.len());
    for f in frames {
        let prev = poses.last().copied().unwrap_or_else(|| CameraPose::identity(f.timestamp));
        let mut p = compose_relative(&prev, &f.rel_pose);
        p.timestamp = f.timestamp;
        poses.push(p);
    }
    Trajectory::new(poses)
}

/// Affine map from sequence timestamps to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub start: f64,
    pub span: f64,
}

impl TimeMap {
    pub fn from_timestamps(ts: &[f64]) -> Self {
        let start = ts.iter().copied().fold(f64::INFINITY, f64::min);
        let end = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = end - start;
        Self {
            start: if start.is_finite() { start } else { 0.0 },
            span: if span > 0.0 && span.is_finite() { span } else { 1.0 },
        }
    }

    pub fn normalize(&self, ts: f64) -> f64 {
        (ts - self.start) / self.span
    }
}

fn default_stride() -> usize {
    4
}
fn default_min_scale() -> f64 {
    1e-4
}
fn default_max_scale() -> f64 {
    1.0
}
fn default_init_opacity() -> f64 {
    0.1
}
fn default_init_beta() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitParams {
    /// Pixel grid spacing for spawning.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_min_scale")]
    pub min_scale: f64,
    #[serde(default = "default_max_scale")]
    pub max_scale: f64,
    #[serde(default = "default_init_opacity")]
    pub opacity: f64,
    /// Initial temporal decay β in normalized time.
    #[serde(default = "default_init_beta")]
    pub beta: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        Self {
            stride: default_stride(),
            min_scale: default_min_scale(),
            max_scale: default_max_scale(),
            opacity: default_init_opacity(),
            beta: default_init_beta(),
        }
    }
}

impl InitParams {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidConfig("init.stride must be >= 1".into()));
        }
        if !(self.min_scale > 0.0 && self.min_scale <= self.max_scale) {
            return Err(Error::InvalidConfig("init.min_scale must be > 0 and <= init.max_scale".into()));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(Error::InvalidConfig(format!("init.opacity must lie in (0, 1), got {}", self.opacity)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("init.beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Mean distance from each point to its `k` nearest neighbors (brute force).
fn knn_mean_distance(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
    use rayon::prelude::*;
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 8];
            let k = k.min(best.len());
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm_squared();
                if d < best[k - 1] {
                    let mut s = k - 1;
                    while s > 0 && best[s - 1] > d {
                        best[s] = best[s - 1];
                        s -= 1;
                    }
                    best[s] = d;
                }
            }
            let found: Vec<f64> = best[..k].iter().filter(|d| d.is_finite()).map(|d| d.sqrt()).collect();
            if found.is_empty() {
                f64::NAN
            } else {
                found.iter().sum::<f64>() / found.len() as f64
            }
        })
        .collect()
}

/// Lifts every `stride`-th pixel of each frame into a Gaussian at its
/// back-projected depth, colored by the pixel and born at the frame's time.
pub fn init_scene_from_frames(
    frames: &[Frame],
    trajectory: &Trajectory,
    k: &CameraIntrinsics,
    params: &InitParams,
    scene_cfg: SceneConfig,
) -> Result<GaussianScene> {
    let times = TimeMap::from_timestamps(&frames.iter().map(|f| f.timestamp).collect::<Vec<_>>());
    init_scene_with_times(frames, trajectory, k, params, scene_cfg, &times)
}

/// As [`init_scene_from_frames`], with birth times taken from `times`.
pub fn init_scene_with_times(
    frames: &[Frame],
    trajectory: &Trajectory,
    k: &CameraIntrinsics,
    params: &InitParams,
    scene_cfg: SceneConfig,
    times: &TimeMap,
) -> Result<GaussianScene> {
    params.validate()?;
    if frames.is_empty() {
        return Err(Error::EmptyDataset("no frames to initialize from".into()));
    }
    if trajectory.len() != frames.len() {
        return Err(Error::LengthMismatch {
            left: frames.len(),
            right: trajectory.len(),
        });
    }
    let mut gaussians = Vec::new();
    for (fi, (f, pose)) in frames.iter().zip(&trajectory.poses).enumerate() {
        let mut pts = Vec::new();
        let mut cols = Vec::new();
        for y in (0..f.height()).step_by(params.stride) {
            for x in (0..f.width()).step_by(params.stride) {
                let d = f.depth.get(x, y);
                if !(d > 0.0 && d.is_finite()) {
                    continue;
                }
                pts.push(pixel_to_world(&Vector2::new(x as f64, y as f64), d, pose, k)?);
                cols.push(f.image.get(x, y));
            }
        }
        if pts.is_empty() {
            return Err(Error::DegenerateDepth { frame: fi });
        }
        let dists = knn_mean_distance(&pts, 3);
        let tau = times.normalize(f.timestamp);
        for ((p, c), dist) in pts.iter().zip(&cols).zip(dists) {
            let s = if dist.is_finite() { dist } else { params.max_scale };
            let s = s.clamp(params.min_scale, params.max_scale);
            let mut g = DynamicGaussian {
                mu: *p,
                log_scale: Vector3::repeat(s.ln()),
                logit_opacity: logit(params.opacity),
                v: Vector3::zeros(),
                tau,
                log_beta: params.beta.ln(),
                ..Default::default()
            };
            g.sh[0] = rgb_to_dc(c);
            gaussians.push(g);
        }
    }
    Ok(GaussianScene::from_gaussians(scene_cfg, gaussians))
}

pub fn dataset_dir_frames(dir: &Path, require_masks: bool) -> Result<(CameraIntrinsics, Vec<Frame>)> {
    let p = DiskProvider::new(dir, require_masks);
    Ok((p.read_intrinsics()?, p.frames()?))
}
