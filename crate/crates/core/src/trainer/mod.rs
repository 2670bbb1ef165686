//! Optimization loop: losses, Adam, density control and the two-phase pose
//! refinement schedule.
//!
//! Phase 1 trains Gaussians against fixed provider poses. From
//! `pose_refine_start` on, each sampled frame's pose increment also trains,
//! driven only by a static-only render compared with the image on pixels the
//! motion mask marks static. Gaussians keep training on the full render.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod densify;
pub mod loss;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::buffer::{Mask, Plane};
use crate::camera::{apply_delta, CameraIntrinsics, PoseDelta, Trajectory};
use crate::error::{Error, Result};
use crate::eval::psnr;
use crate::odometry::{init_scene_with_times, Frame, TimeMap};
use crate::raster::{
    apply_frozen_rule, rasterize_backward, rasterize_backward_tagged, render, render_static_only, RasterConfig,
    RenderGrads,
};
use crate::scene::{DynamicGaussian, GaussianScene, ParamGroup, PARAM_LEN};

pub use adam::{adam_step, AdamState};
pub use config::{LearningRates, LossWeights, TrainConfig, TrainSchedule};
pub use densify::{densify_and_prune, DensifyParams, DensifyReport, DensifyStats};
pub use loss::{depth_loss, masked_l1, motion_loss, photometric_loss, threshold_velocity};

/// Consecutive non-finite iterations tolerated before training aborts.
const MAX_NONFINITE_STREAK: usize = 10;

/// Training frames with the provider's poses for them.
#[derive(Clone, Debug)]
pub struct TrainInput {
    pub frames: Vec<Frame>,
    pub trajectory: Trajectory,
    pub intrinsics: CameraIntrinsics,
    /// Maps frame timestamps to the normalized time axis of the scene.
    pub time_map: TimeMap,
}

impl TrainInput {
    pub fn new(frames: Vec<Frame>, trajectory: Trajectory, intrinsics: CameraIntrinsics) -> Self {
        let ts: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
        Self {
            frames,
            trajectory,
            intrinsics,
            time_map: TimeMap::from_timestamps(&ts),
        }
    }
}

/// One row of the metrics log, averaged over a logging interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub total: f64,
    pub photometric: f64,
    pub depth: f64,
    pub motion: f64,
    pub pose: f64,
    pub psnr: f64,
}

pub const METRICS_HEADER: &str = "iter,total,photometric,depth,motion,pose,train_psnr";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter, self.total, self.photometric, self.depth, self.motion, self.pose, self.psnr
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s += &r.csv_line();
        s.push('\n');
    }
    s
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct IntervalAccum {
    pub count: usize,
    pub sums: [f64; 6],
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub scene: GaussianScene,
    /// Provider poses with the learned increments applied.
    pub refined: Trajectory,
    pub deltas: Vec<PoseDelta>,
    pub metrics: Vec<MetricsRow>,
    /// PSNR of the final model on each training frame.
    pub final_psnr: Vec<f64>,
    pub skipped_steps: usize,
}

/// Resumable training state.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub input: TrainInput,
    pub scene: GaussianScene,
    pub(crate) adam: AdamState,
    pub(crate) deltas: Vec<[f64; 6]>,
    pub(crate) pose_adam: Vec<AdamState>,
    pub(crate) stats: DensifyStats,
    /// Median distance of the initial means from the mean camera center.
    pub(crate) extent: f64,
    pub(crate) iter: usize,
    pub(crate) interval: IntervalAccum,
    pub(crate) metrics: Vec<MetricsRow>,
    pub(crate) skipped: usize,
    pub(crate) streak: usize,
    raster: RasterConfig,
}

/// Frame visiting order for `epoch`: a fresh shuffle seeded by `seed + epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
    order.shuffle(&mut rng);
    order
}

fn scene_extent(scene: &GaussianScene, traj: &Trajectory) -> f64 {
    let centers = traj.positions();
    let c = centers.iter().sum::<Vector3<f64>>() / centers.len().max(1) as f64;
    let mut d: Vec<f64> = scene.gaussians().iter().map(|g| (g.mu - c).norm()).collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2].max(1e-6)
}

impl Trainer {
    /// Initializes the scene by lifting the provider depth maps.
    pub fn new(input: TrainInput, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_input(&input)?;
        let scene = init_scene_with_times(
            &input.frames,
            &input.trajectory,
            &input.intrinsics,
            &cfg.init,
            cfg.scene.clone(),
            &input.time_map,
        )?;
        Ok(Self::with_scene(input, cfg, scene))
    }

    /// Starts from an existing scene with fresh optimizer state.
    pub fn with_scene(input: TrainInput, cfg: TrainConfig, scene: GaussianScene) -> Self {
        let n = scene.len();
        let frames = input.frames.len();
        let extent = scene_extent(&scene, &input.trajectory);
        let raster = cfg.raster_config();
        Self {
            cfg,
            input,
            scene,
            adam: AdamState::new(n * PARAM_LEN),
            deltas: vec![[0.0; 6]; frames],
            pose_adam: vec![AdamState::new(6); frames],
            stats: DensifyStats::new(n),
            extent,
            iter: 0,
            interval: IntervalAccum::default(),
            metrics: Vec::new(),
            skipped: 0,
            streak: 0,
            raster,
        }
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn scene_extent(&self) -> f64 {
        self.extent
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn delta(&self, frame: usize) -> PoseDelta {
        PoseDelta::from_slice(&self.deltas[frame])
    }

    pub fn in_pose_phase(&self) -> bool {
        self.iter >= self.cfg.schedule.pose_start_iter()
    }

    fn frame_for(&self, iter: usize) -> usize {
        let n = self.input.frames.len();
        epoch_order(self.cfg.seed, iter / n, n)[iter % n]
    }

    /// Runs until `iter` reaches `until` (capped at the scheduled total).
    pub fn run(&mut self, until: usize) -> Result<()> {
        let until = until.min(self.cfg.schedule.total_iters);
        while self.iter < until {
            self.step()?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        let it = self.iter;
        let fi = self.frame_for(it);
        let phase2 = self.in_pose_phase();
        let k = self.input.intrinsics;
        let frame = &self.input.frames[fi];
        let pose = self.input.trajectory.poses[fi];
        let delta = if phase2 { self.delta(fi) } else { PoseDelta::zero() };
        let t = self.input.time_map.normalize(frame.timestamp);
        let w = &self.cfg.loss;

        let out = render(&self.scene, &pose, &delta, &k, t, &self.raster);
        let (lp, g_color) = photometric_loss(&out.color, &frame.image, w.lambda_ssim)?;
        let (ld, g_depth) = depth_loss(&out.depth, &out.alpha_acc, &frame.depth, &frame.valid_depth())?;
        let (lm, g_vel) = motion_loss(&out.velocity, &frame.motion_mask, self.scene.config.v_thr)?;
        let grads = RenderGrads {
            color: g_color,
            depth: scaled(g_depth, w.lambda_depth),
            velocity: scaled(g_vel, w.lambda_motion),
        };
        let tagged = rasterize_backward_tagged(&out, &self.scene, &grads)?;
        let mut g = apply_frozen_rule(&tagged);
        g.pose = [0.0; 6];

        let mut l_pose = 0.0;
        if phase2 {
            let so = render_static_only(&self.scene, &pose, &delta, &k, t, &self.raster);
            let keep = Mask {
                data: frame.motion_mask.data.iter().map(|m| !m).collect(),
                ..frame.motion_mask.clone()
            };
            let (l, g_static) = masked_l1(&so.color, &frame.image, &keep)?;
            l_pose = l;
            let mut rg = RenderGrads::zeros(k.width, k.height);
            rg.color = g_static;
            if w.lambda_pose_depth > 0.0 {
                let valid = Mask {
                    data: keep.data.iter().zip(&frame.valid_depth().data).map(|(a, b)| *a && *b).collect(),
                    ..keep.clone()
                };
                let (ld, gd) = depth_loss(&so.depth, &so.alpha_acc, &frame.depth, &valid)?;
                l_pose += w.lambda_pose_depth * ld;
                rg.depth = scaled(gd, w.lambda_pose_depth);
            }
            g.pose = rasterize_backward(&so, &self.scene, &rg)?.pose;
        }

        let total = lp + w.lambda_depth * ld + w.lambda_motion * lm;
        let train_psnr = psnr(&out.color, &frame.image)?;
        if !total.is_finite() || !l_pose.is_finite() || !g.is_finite() {
            self.skipped += 1;
            self.streak += 1;
            log::warn!("iteration {it}: non-finite loss or gradient on frame {fi}; step skipped");
            if self.streak >= MAX_NONFINITE_STREAK {
                return Err(Error::NonFinite(self.diagnostic(it, fi, total, l_pose)));
            }
            self.iter += 1;
            return Ok(());
        }
        self.streak = 0;

        // Gaussian parameters
        let mut lrs = self.cfg.lr.slot_table(it, self.cfg.schedule.total_iters);
        for lr in &mut lrs[ParamGroup::Mean.range()] {
            *lr *= self.extent;
        }
        let n = self.scene.len();
        let mut params = Vec::with_capacity(n * PARAM_LEN);
        for gs in self.scene.gaussians() {
            params.extend_from_slice(&gs.to_flat());
        }
        let flat_grads: Vec<f64> = g.gaussians.iter().flat_map(|x| x.iter().copied()).collect();
        adam_step(&mut params, &flat_grads, &mut self.adam, |i| lrs[i % PARAM_LEN])?;
        for (i, dst) in self.scene.gaussians_mut().iter_mut().enumerate() {
            *dst = DynamicGaussian::read_flat(&params[i * PARAM_LEN..(i + 1) * PARAM_LEN]);
            dst.normalize_rotation();
        }
        if phase2 {
            let lr = self.cfg.lr.pose_at(it, self.cfg.schedule.pose_start_iter(), self.cfg.schedule.total_iters);
            adam_step(&mut self.deltas[fi], &g.pose, &mut self.pose_adam[fi], |i| lr[i])?;
        }

        // density control
        let s = self.cfg.schedule.clone();
        if it < s.densify_stop {
            for i in 0..n {
                if g.visible[i] {
                    let mg = Vector3::new(g.gaussians[i][0], g.gaussians[i][1], g.gaussians[i][2]);
                    self.stats.record(i, g.screen_grad[i], mg);
                }
            }
            let next = it + 1;
            if next >= s.densify_start && next < s.densify_stop && next % s.densify_interval == 0 {
                self.densify();
            }
        }

        self.interval.count += 1;
        for (acc, v) in self.interval.sums.iter_mut().zip([total, lp, ld, lm, l_pose, train_psnr]) {
            *acc += v;
        }
        self.iter += 1;
        if self.iter % s.log_interval == 0 || self.iter == s.total_iters {
            self.flush_interval();
        }
        Ok(())
    }

    fn flush_interval(&mut self) {
        let c = self.interval.count.max(1) as f64;
        let m = self.interval.sums.map(|x| x / c);
        let row = MetricsRow {
            iter: self.iter,
            total: m[0],
            photometric: m[1],
            depth: m[2],
            motion: m[3],
            pose: m[4],
            psnr: m[5],
        };
        log::info!(
            "iter {:>6}  loss {:.5}  psnr {:.2}  gaussians {}",
            row.iter,
            row.total,
            row.psnr,
            self.scene.len()
        );
        self.metrics.push(row);
        self.interval = IntervalAccum::default();
    }

    fn densify(&mut self) {
        let k = &self.input.intrinsics;
        let s = &self.cfg.schedule;
        let params = DensifyParams {
            grad_thr: s.grad_densify_thr * 2.0 / k.width.max(k.height) as f64,
            split_scale_thr: s.percent_dense * self.extent,
            prune_opacity_thr: s.prune_opacity_thr,
            max_gaussians: s.max_gaussians,
        };
        let old_adam = std::mem::replace(&mut self.adam, AdamState::new(0));
        match densify_and_prune(&mut self.scene, &self.stats, &params) {
            Ok(report) => {
                let mut adam = AdamState::new(report.sources.len() * PARAM_LEN);
                adam.step = old_adam.step;
                for (new, src) in report.sources.iter().enumerate() {
                    if let Some(old) = src {
                        let (a, b) = (new * PARAM_LEN, old * PARAM_LEN);
                        adam.m[a..a + PARAM_LEN].copy_from_slice(&old_adam.m[b..b + PARAM_LEN]);
                        adam.v[a..a + PARAM_LEN].copy_from_slice(&old_adam.v[b..b + PARAM_LEN]);
                    }
                }
                log::debug!(
                    "densify at {}: +{} clones, {} splits, -{} pruned -> {}",
                    self.iter + 1,
                    report.cloned,
                    report.split,
                    report.pruned,
                    self.scene.len()
                );
                self.adam = adam;
            }
            Err(e) => {
                log::warn!("densify at {}: {e}", self.iter + 1);
                let mut adam = AdamState::new(self.scene.len() * PARAM_LEN);
                adam.step = old_adam.step;
                self.adam = adam;
            }
        }
        self.stats = DensifyStats::new(self.scene.len());
    }

    fn diagnostic(&self, it: usize, fi: usize, total: f64, l_pose: f64) -> String {
        let bad = self.scene.gaussians().iter().position(|g| !g.is_finite());
        format!(
            "{MAX_NONFINITE_STREAK} consecutive non-finite iterations (last: iter {it}, frame {fi}, loss {total}, pose loss {l_pose}); \
             {} Gaussians, first non-finite Gaussian: {bad:?}, pose delta: {:?}",
            self.scene.len(),
            self.deltas[fi]
        )
    }

    pub fn refined_trajectory(&self) -> Trajectory {
        Trajectory::new(
            self.input
                .trajectory
                .poses
                .iter()
                .zip(&self.deltas)
                .map(|(p, d)| apply_delta(p, &PoseDelta::from_slice(d)))
                .collect(),
        )
    }

    pub fn finish(self) -> Result<TrainOutput> {
        let k = self.input.intrinsics;
        let mut final_psnr = Vec::with_capacity(self.input.frames.len());
        for (i, f) in self.input.frames.iter().enumerate() {
            let t = self.input.time_map.normalize(f.timestamp);
            let out = render(&self.scene, &self.input.trajectory.poses[i], &self.delta(i), &k, t, &self.raster);
            final_psnr.push(psnr(&out.color, &f.image)?);
        }
        Ok(TrainOutput {
            refined: self.refined_trajectory(),
            deltas: self.deltas.iter().map(|d| PoseDelta::from_slice(d)).collect(),
            metrics: self.metrics,
            final_psnr,
            skipped_steps: self.skipped,
            scene: self.scene,
        })
    }
}

fn scaled(mut p: Plane, s: f64) -> Plane {
    for v in p.data.iter_mut() {
        *v *= s;
    }
    p
}

fn check_input(input: &TrainInput) -> Result<()> {
    if input.frames.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "training needs at least 2 frames, got {}",
            input.frames.len()
        )));
    }
    if input.trajectory.len() != input.frames.len() {
        return Err(Error::LengthMismatch {
            left: input.frames.len(),
            right: input.trajectory.len(),
        });
    }
    input.intrinsics.validate()?;
    for (i, f) in input.frames.iter().enumerate() {
        if f.width() != input.intrinsics.width || f.height() != input.intrinsics.height {
            return Err(Error::ShapeMismatch(format!(
                "frame {i} is {}x{}, intrinsics say {}x{}",
                f.width(),
                f.height(),
                input.intrinsics.width,
                input.intrinsics.height
            )));
        }
    }
    Ok(())
}

/// Initializes and trains for the scheduled number of iterations.
pub fn train(input: TrainInput, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut t = Trainer::new(input, cfg.clone())?;
    t.run(cfg.schedule.total_iters)?;
    t.finish()
}
