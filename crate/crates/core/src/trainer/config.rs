//! Training configuration, loaded from TOML. Every field has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odometry::{InitParams, NoiseSpec};
use crate::raster::RasterConfig;
use crate::scene::{ParamGroup, SceneConfig, PARAM_LEN};

macro_rules! defaults {
    ($($name:ident: $ty:ty = $val:expr;)*) => {
        $(fn $name() -> $ty { $val })*
    };
}

defaults! {
    d_lambda_ssim: f64 = 0.2;
    d_lambda_depth: f64 = 0.1;
    d_lambda_motion: f64 = 0.10;
    d_total_iters: usize = 30_000;
    d_pose_refine_start: f64 = 0.8;
    d_densify_interval: usize = 100;
    d_densify_start: usize = 500;
    d_densify_stop: usize = 15_000;
    d_prune_opacity_thr: f64 = 0.005;
    d_grad_densify_thr: f64 = 0.0002;
    d_percent_dense: f64 = 0.01;
    d_max_gaussians: usize = 200_000;
    d_log_interval: usize = 100;
    d_lr_means: f64 = 1.6e-4;
    d_lr_means_final: f64 = 0.01;
    d_lr_scales: f64 = 5e-3;
    d_lr_rotations: f64 = 1e-3;
    d_lr_opacity: f64 = 5e-2;
    d_lr_sh: f64 = 2.5e-3;
    d_lr_sh_rest: f64 = 2.5e-3 / 20.0;
    d_lr_velocity: f64 = 1e-3;
    d_lr_tau: f64 = 1e-3;
    d_lr_log_beta: f64 = 1e-3;
    d_lr_pose: f64 = 1e-4;
    d_lr_pose_final: f64 = 1.0;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "d_lambda_ssim")]
    pub lambda_ssim: f64,
    #[serde(default = "d_lambda_depth")]
    pub lambda_depth: f64,
    #[serde(default = "d_lambda_motion")]
    pub lambda_motion: f64,
    /// Weight of the masked depth term in the static-only pose objective.
    /// Zero leaves pose refinement purely photometric.
    #[serde(default)]
    pub lambda_pose_depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ssim: d_lambda_ssim(),
            lambda_depth: d_lambda_depth(),
            lambda_motion: d_lambda_motion(),
            lambda_pose_depth: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    #[serde(default = "d_total_iters")]
    pub total_iters: usize,
    /// Fraction of `total_iters` after which pose increments train.
    #[serde(default = "d_pose_refine_start")]
    pub pose_refine_start: f64,
    #[serde(default = "d_densify_interval")]
    pub densify_interval: usize,
    #[serde(default = "d_densify_start")]
    pub densify_start: usize,
    /// No densification at or after this iteration.
    #[serde(default = "d_densify_stop")]
    pub densify_stop: usize,
    #[serde(default = "d_prune_opacity_thr")]
    pub prune_opacity_thr: f64,
    /// Average screen-space gradient threshold, in normalized device units
    /// (pixel units scaled by half the larger image side).
    #[serde(default = "d_grad_densify_thr")]
    pub grad_densify_thr: f64,
    /// Clone/split boundary as a fraction of the scene extent.
    #[serde(default = "d_percent_dense")]
    pub percent_dense: f64,
    #[serde(default = "d_max_gaussians")]
    pub max_gaussians: usize,
    /// Iterations per metrics row.
    #[serde(default = "d_log_interval")]
    pub log_interval: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_iters: d_total_iters(),
            pose_refine_start: d_pose_refine_start(),
            densify_interval: d_densify_interval(),
            densify_start: d_densify_start(),
            densify_stop: d_densify_stop(),
            prune_opacity_thr: d_prune_opacity_thr(),
            grad_densify_thr: d_grad_densify_thr(),
            percent_dense: d_percent_dense(),
            max_gaussians: d_max_gaussians(),
            log_interval: d_log_interval(),
        }
    }
}

impl TrainSchedule {
    /// First iteration of the pose-refinement phase.
    pub fn pose_start_iter(&self) -> usize {
        (self.pose_refine_start * self.total_iters as f64).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    /// Multiplied by the scene extent during training.
    #[serde(default = "d_lr_means")]
    pub means: f64,
    /// Mean learning rate at the last iteration, as a factor of `means`;
    /// interpolated exponentially.
    #[serde(default = "d_lr_means_final")]
    pub means_final_factor: f64,
    #[serde(default = "d_lr_scales")]
    pub scales: f64,
    #[serde(default = "d_lr_rotations")]
    pub rotations: f64,
    #[serde(default = "d_lr_opacity")]
    pub opacity: f64,
    /// Degree-0 SH coefficients.
    #[serde(default = "d_lr_sh")]
    pub sh: f64,
    /// Higher-degree SH coefficients.
    #[serde(default = "d_lr_sh_rest")]
    pub sh_rest: f64,
    #[serde(default = "d_lr_velocity")]
    pub velocity: f64,
    #[serde(default = "d_lr_tau")]
    pub tau: f64,
    #[serde(default = "d_lr_log_beta")]
    pub log_beta: f64,
    /// Pose increments; the rotation part, and the translation part unless
    /// `pose_translation` is set.
    #[serde(default = "d_lr_pose")]
    pub pose: f64,
    /// Translation part of the pose increments, in world units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_translation: Option<f64>,
    /// Pose learning rate at the last iteration as a factor of its value when
    /// refinement starts; interpolated exponentially.
    #[serde(default = "d_lr_pose_final")]
    pub pose_final_factor: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: d_lr_means(),
            means_final_factor: d_lr_means_final(),
            scales: d_lr_scales(),
            rotations: d_lr_rotations(),
            opacity: d_lr_opacity(),
            sh: d_lr_sh(),
            sh_rest: d_lr_sh_rest(),
            velocity: d_lr_velocity(),
            tau: d_lr_tau(),
            log_beta: d_lr_log_beta(),
            pose: d_lr_pose(),
            pose_translation: None,
            pose_final_factor: d_lr_pose_final(),
        }
    }
}

impl LearningRates {
    pub fn means_at(&self, iter: usize, total: usize) -> f64 {
        let f = if total <= 1 { 1.0 } else { (iter as f64 / (total - 1) as f64).min(1.0) };
        self.means * self.means_final_factor.powf(f)
    }

    /// Learning rates for `[omega, upsilon]` at `iter`, with refinement
    /// running from `start` to `total`.
    pub fn pose_at(&self, iter: usize, start: usize, total: usize) -> [f64; 6] {
        let span = total.saturating_sub(start + 1);
        let f = if span == 0 { 0.0 } else { (iter.saturating_sub(start) as f64 / span as f64).min(1.0) };
        let decay = self.pose_final_factor.powf(f);
        let rot = self.pose * decay;
        let trans = self.pose_translation.unwrap_or(self.pose) * decay;
        [rot, rot, rot, trans, trans, trans]
    }

    /// Learning rate for every flat Gaussian slot at `iter`.
    pub fn slot_table(&self, iter: usize, total: usize) -> [f64; PARAM_LEN] {
        let mut t = [0.0; PARAM_LEN];
        for group in ParamGroup::ALL {
            let lr = match group {
                ParamGroup::Mean => self.means_at(iter, total),
                ParamGroup::Scale => self.scales,
                ParamGroup::Rotation => self.rotations,
                ParamGroup::Opacity => self.opacity,
                ParamGroup::Sh => self.sh_rest,
                ParamGroup::Velocity => self.velocity,
                ParamGroup::Tau => self.tau,
                ParamGroup::LogBeta => self.log_beta,
            };
            for i in group.range() {
                t[i] = lr;
            }
        }
        let dc = ParamGroup::Sh.range().start;
        for slot in t.iter_mut().skip(dc).take(3) {
            *slot = self.sh;
        }
        t
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    /// Disables rasterizer parallelism.
    #[serde(default)]
    pub single_threaded: bool,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub lr: LearningRates,
    #[serde(default)]
    pub init: InitParams,
    #[serde(default)]
    pub raster: RasterConfig,
    /// Extra corruption applied to the provider's relative poses, depth and masks.
    #[serde(default)]
    pub noise: NoiseSpec,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("train config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn raster_config(&self) -> RasterConfig {
        RasterConfig {
            single_threaded: self.single_threaded || self.raster.single_threaded,
            ..self.raster.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.init.validate()?;
        self.noise.validate()?;
        let l = &self.loss;
        for (name, v) in [
            ("loss.lambda_ssim", l.lambda_ssim),
            ("loss.lambda_depth", l.lambda_depth),
            ("loss.lambda_motion", l.lambda_motion),
            ("loss.lambda_pose_depth", l.lambda_pose_depth),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if l.lambda_ssim > 1.0 {
            return Err(Error::InvalidConfig("loss.lambda_ssim must be <= 1".into()));
        }
        let s = &self.schedule;
        if !(s.pose_refine_start > 0.0 && s.pose_refine_start < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "schedule.pose_refine_start must lie in (0, 1), got {}",
                s.pose_refine_start
            )));
        }
        if s.total_iters == 0 {
            return Err(Error::InvalidConfig("schedule.total_iters must be >= 1".into()));
        }
        if s.log_interval == 0 || s.densify_interval == 0 {
            return Err(Error::InvalidConfig("schedule.log_interval and schedule.densify_interval must be >= 1".into()));
        }
        let r = &self.lr;
        for (name, v) in [
            ("lr.means", r.means),
            ("lr.means_final_factor", r.means_final_factor),
            ("lr.scales", r.scales),
            ("lr.rotations", r.rotations),
            ("lr.opacity", r.opacity),
            ("lr.sh", r.sh),
            ("lr.sh_rest", r.sh_rest),
            ("lr.velocity", r.velocity),
            ("lr.tau", r.tau),
            ("lr.log_beta", r.log_beta),
            ("lr.pose", r.pose),
            ("lr.pose_translation", r.pose_translation.unwrap_or(0.0)),
            ("lr.pose_final_factor", r.pose_final_factor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}
