//! Time-varying Gaussian primitives and the scene container.
//!
//! Each primitive oscillates around its base mean with a sinusoid of period
//! `cycle_length` scaled by its velocity, and its opacity follows a Gaussian
//! envelope centered on its life peak `tau`:
//!
//! ```text
//! mu(t)    = mu + l / (2π) · sin(2π (t − tau) / l) · v
//! alpha(t) = alpha · exp(−(t − tau)² / (2 β²))
//! ```

use std::f64::consts::PI;

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sh::{MAX_SH_COEFFS, MAX_SH_DEGREE};

/// Number of scalars in the flat parameter layout of one Gaussian.
pub const PARAM_LEN: usize = 64;

/// Offsets of each parameter group inside the flat layout.
pub mod layout {
    pub const MU: usize = 0;
    pub const LOG_SCALE: usize = 3;
    pub const ROT: usize = 6;
    pub const OPACITY: usize = 10;
    pub const SH: usize = 11;
    pub const VELOCITY: usize = 59;
    pub const TAU: usize = 62;
    pub const LOG_BETA: usize = 63;
}

/// Parameter groups, each with its own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Mean,
    Scale,
    Rotation,
    Opacity,
    Sh,
    Velocity,
    Tau,
    LogBeta,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Mean,
        ParamGroup::Scale,
        ParamGroup::Rotation,
        ParamGroup::Opacity,
        ParamGroup::Sh,
        ParamGroup::Velocity,
        ParamGroup::Tau,
        ParamGroup::LogBeta,
    ];

    pub fn range(self) -> std::ops::Range<usize> {
        use layout::*;
        match self {
            ParamGroup::Mean => MU..MU + 3,
            ParamGroup::Scale => LOG_SCALE..LOG_SCALE + 3,
            ParamGroup::Rotation => ROT..ROT + 4,
            ParamGroup::Opacity => OPACITY..OPACITY + 1,
            ParamGroup::Sh => SH..SH + 3 * MAX_SH_COEFFS,
            ParamGroup::Velocity => VELOCITY..VELOCITY + 3,
            ParamGroup::Tau => TAU..TAU + 1,
            ParamGroup::LogBeta => LOG_BETA..LOG_BETA + 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Mean => "mean",
            ParamGroup::Scale => "log_scale",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Sh => "sh",
            ParamGroup::Velocity => "velocity",
            ParamGroup::Tau => "tau",
            ParamGroup::LogBeta => "log_beta",
        }
    }
}

/// One time-varying Gaussian primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicGaussian {
    /// Mean at the life peak.
    pub mu: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// Covariance rotation as `(w, x, y, z)`.
    pub rot_q: Vector4<f64>,
    pub logit_opacity: f64,
    /// SH coefficients, one RGB triple per basis function. Entries past the
    /// scene's degree are ignored.
    pub sh: [Vector3<f64>; MAX_SH_COEFFS],
    /// Instant velocity at the life peak.
    pub v: Vector3<f64>,
    pub tau: f64,
    pub log_beta: f64,
}

impl Default for DynamicGaussian {
    fn default() -> Self {
        Self {
            mu: Vector3::zeros(),
            log_scale: Vector3::repeat(-2.0),
            rot_q: Vector4::new(1.0, 0.0, 0.0, 0.0),
            logit_opacity: 0.0,
            sh: [Vector3::zeros(); MAX_SH_COEFFS],
            v: Vector3::zeros(),
            tau: 0.0,
            log_beta: 0.3f64.ln(),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl DynamicGaussian {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.logit_opacity)
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        use layout::*;
        out[MU..MU + 3].copy_from_slice(self.mu.as_slice());
        out[LOG_SCALE..LOG_SCALE + 3].copy_from_slice(self.log_scale.as_slice());
        out[ROT..ROT + 4].copy_from_slice(self.rot_q.as_slice());
        out[OPACITY] = self.logit_opacity;
        for (k, c) in self.sh.iter().enumerate() {
            out[SH + 3 * k..SH + 3 * k + 3].copy_from_slice(c.as_slice());
        }
        out[VELOCITY..VELOCITY + 3].copy_from_slice(self.v.as_slice());
        out[TAU] = self.tau;
        out[LOG_BETA] = self.log_beta;
    }

    pub fn read_flat(src: &[f64]) -> Self {
        use layout::*;
        let v3 = |o: usize| Vector3::new(src[o], src[o + 1], src[o + 2]);
        let mut sh = [Vector3::zeros(); MAX_SH_COEFFS];
        for (k, c) in sh.iter_mut().enumerate() {
            *c = v3(SH + 3 * k);
        }
        Self {
            mu: v3(MU),
            log_scale: v3(LOG_SCALE),
            rot_q: Vector4::new(src[ROT], src[ROT + 1], src[ROT + 2], src[ROT + 3]),
            logit_opacity: src[OPACITY],
            sh,
            v: v3(VELOCITY),
            tau: src[TAU],
            log_beta: src[LOG_BETA],
        }
    }

    pub fn to_flat(&self) -> [f64; PARAM_LEN] {
        let mut out = [0.0; PARAM_LEN];
        self.write_flat(&mut out);
        out
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rot_q.norm();
        if n > 0.0 && n.is_finite() {
            self.rot_q /= n;
        } else {
            self.rot_q = Vector4::new(1.0, 0.0, 0.0, 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}

fn default_cycle_length() -> f64 {
    0.3
}
fn default_v_thr() -> f64 {
    0.5
}
fn default_v_scale() -> f64 {
    0.5
}
fn default_sh_degree() -> usize {
    1
}

/// Scene-wide hyperparameters of the temporal model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Period of the sinusoidal mean motion, in normalized time.
    #[serde(default = "default_cycle_length")]
    pub cycle_length: f64,
    /// Velocity-scalar threshold separating static from dynamic Gaussians.
    #[serde(default = "default_v_thr")]
    pub v_thr: f64,
    /// Speed at which the velocity scalar reaches `1 − 1/e`.
    #[serde(default = "default_v_scale")]
    pub v_scale: f64,
    #[serde(default = "default_sh_degree")]
    pub sh_degree: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            cycle_length: default_cycle_length(),
            v_thr: default_v_thr(),
            v_scale: default_v_scale(),
            sh_degree: default_sh_degree(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_length > 0.0 && self.cycle_length.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scene.cycle_length must be > 0, got {}",
                self.cycle_length
            )));
        }
        if !(self.v_thr > 0.0 && self.v_thr < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "scene.v_thr must lie in (0, 1), got {}",
                self.v_thr
            )));
        }
        if !(self.v_scale > 0.0 && self.v_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scene.v_scale must be > 0, got {}",
                self.v_scale
            )));
        }
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::InvalidConfig(format!(
                "scene.sh_degree must be at most {MAX_SH_DEGREE}, got {}",
                self.sh_degree
            )));
        }
        Ok(())
    }
}

/// Mean and opacity of a Gaussian at a given time, with the intermediate
/// terms needed to differentiate them.
#[derive(Clone, Copy, Debug)]
pub struct TimeEval {
    pub mu_t: Vector3<f64>,
    pub alpha_t: f64,
    /// `l/2π · sin(2π(t − τ)/l)`, the factor multiplying `v`.
    pub displacement: f64,
    /// `cos(2π(t − τ)/l)`.
    pub phase_cos: f64,
    pub dt: f64,
    pub base_alpha: f64,
}

/// Gradients of a scalar loss w.r.t. the temporal parameters of one Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TimeGrad {
    pub mu: Vector3<f64>,
    pub v: Vector3<f64>,
    pub tau: f64,
    pub log_beta: f64,
    pub logit_opacity: f64,
}

/// Evaluates the time-dependent mean and opacity of `g` at time `t`.
pub fn eval_at_time(g: &DynamicGaussian, t: f64, cfg: &SceneConfig) -> TimeEval {
    let l = cfg.cycle_length;
    let dt = t - g.tau;
    let phase = 2.0 * PI * dt / l;
    let displacement = l / (2.0 * PI) * phase.sin();
    let beta = g.beta();
    let base_alpha = g.opacity();
    let alpha_t = base_alpha * (-(dt * dt) / (2.0 * beta * beta)).exp();
    TimeEval {
        mu_t: g.mu + g.v * displacement,
        alpha_t,
        displacement,
        phase_cos: phase.cos(),
        dt,
        base_alpha,
    }
}

/// Chains gradients w.r.t. `(mu_t, alpha_t)` back to the Gaussian's parameters.
pub fn eval_at_time_backward(
    g: &DynamicGaussian,
    ev: &TimeEval,
    grad_mu_t: &Vector3<f64>,
    grad_alpha_t: f64,
) -> TimeGrad {
    let beta = g.beta();
    let inv_b2 = 1.0 / (beta * beta);
    TimeGrad {
        mu: *grad_mu_t,
        v: grad_mu_t * ev.displacement,
        tau: -ev.phase_cos * g.v.dot(grad_mu_t) + grad_alpha_t * ev.alpha_t * ev.dt * inv_b2,
        log_beta: grad_alpha_t * ev.alpha_t * ev.dt * ev.dt * inv_b2,
        logit_opacity: grad_alpha_t * ev.alpha_t * (1.0 - ev.base_alpha),
    }
}

/// Maps speed to `[0, 1)`: `1 − exp(−‖v‖ / v_scale)`.
pub fn velocity_scalar(g: &DynamicGaussian, cfg: &SceneConfig) -> f64 {
    1.0 - (-g.v.norm() / cfg.v_scale).exp()
}

/// Gradient of [`velocity_scalar`] w.r.t. `v`; zero at `v = 0`.
pub fn velocity_scalar_grad(g: &DynamicGaussian, cfg: &SceneConfig) -> Vector3<f64> {
    let n = g.v.norm();
    if n == 0.0 {
        return Vector3::zeros();
    }
    g.v * ((-n / cfg.v_scale).exp() / (cfg.v_scale * n))
}

/// A growable collection of Gaussians plus the scene hyperparameters.
///
/// Every mutable access bumps a generation counter so render outputs can
/// detect that the scene changed between the forward and backward pass.
#[derive(Clone, Debug)]
pub struct GaussianScene {
    gaussians: Vec<DynamicGaussian>,
    pub config: SceneConfig,
    generation: u64,
}

impl GaussianScene {
    pub fn new(config: SceneConfig) -> Self {
        Self {
            gaussians: Vec::new(),
            config,
            generation: 0,
        }
    }

    pub fn from_gaussians(config: SceneConfig, gaussians: Vec<DynamicGaussian>) -> Self {
        Self {
            gaussians,
            config,
            generation: 0,
        }
    }

    pub fn gaussians(&self) -> &[DynamicGaussian] {
        &self.gaussians
    }

    pub fn gaussians_mut(&mut self) -> &mut Vec<DynamicGaussian> {
        self.generation += 1;
        &mut self.gaussians
    }

    pub fn push(&mut self, g: DynamicGaussian) {
        self.generation += 1;
        self.gaussians.push(g);
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Copy of the scene restricted to `ids`, in that order.
    pub fn subset(&self, ids: &[usize]) -> GaussianScene {
        GaussianScene::from_gaussians(
            self.config.clone(),
            ids.iter().map(|&i| self.gaussians[i]).collect(),
        )
    }
}

/// Partitions Gaussian indices into `(static, dynamic)` by thresholding the
/// velocity scalar at `v_thr` (strictly greater is dynamic).
pub fn split_static_dynamic(scene: &GaussianScene) -> (Vec<usize>, Vec<usize>) {
    let cfg = &scene.config;
    scene
        .gaussians()
        .iter()
        .enumerate()
        .map(|(i, g)| (i, velocity_scalar(g, cfg) > cfg.v_thr))
        .fold((Vec::new(), Vec::new()), |(mut st, mut dy), (i, is_dyn)| {
            if is_dyn {
                dy.push(i);
            } else {
                st.push(i);
            }
            (st, dy)
        })
}
