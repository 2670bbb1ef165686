//! Differentiable tile rasterizer for time-varying Gaussians.
//!
//! [`render`] projects the scene at a time `t` through a refined camera view
//! and alpha-blends the splats front to back into color, depth, velocity and
//! accumulated-alpha buffers. [`rasterize_backward`] returns analytic
//! gradients for every Gaussian parameter and the pose increment.

mod backward;
mod forward;
mod project;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::buffer::{ColorImage, Plane};
use crate::camera::{CameraIntrinsics, CameraPose, PoseDelta, View};
use crate::scene::{split_static_dynamic, GaussianScene};

pub use backward::{
    apply_frozen_rule, rasterize_backward, rasterize_backward_tagged, RenderGrads, SceneGrads,
    TaggedGrads,
};
pub use forward::rasterize;
pub use project::{project, project_subset};

fn default_tile_size() -> usize {
    16
}
fn default_min_contribution() -> f64 {
    1.0 / 255.0
}
fn default_min_transmittance() -> f64 {
    1e-4
}
fn default_kernel_cutoff() -> f64 {
    3.0
}
fn default_lowpass() -> f64 {
    0.3
}
fn default_norm_eps() -> f64 {
    1e-6
}

/// Rasterizer settings. The defaults are the production values; tests relax
/// the cutoffs to compare against dense or finite-difference oracles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterConfig {
    #[serde(default = "default_tile_size")]
    pub tile_size: usize,
    /// Blend contributions `alpha·G` below this are skipped.
    #[serde(default = "default_min_contribution")]
    pub min_contribution: f64,
    /// A pixel stops blending once its transmittance drops below this.
    #[serde(default = "default_min_transmittance")]
    pub min_transmittance: f64,
    /// Kernel support radius in standard deviations (Mahalanobis distance).
    #[serde(default = "default_kernel_cutoff")]
    pub kernel_cutoff: f64,
    /// Screen-space low-pass variance added to the projected covariance, px².
    #[serde(default = "default_lowpass")]
    pub lowpass: f64,
    /// Floor on accumulated alpha when normalizing depth and velocity.
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    #[serde(default)]
    pub single_threaded: bool,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: default_tile_size(),
            min_contribution: default_min_contribution(),
            min_transmittance: default_min_transmittance(),
            kernel_cutoff: default_kernel_cutoff(),
            lowpass: default_lowpass(),
            norm_eps: default_norm_eps(),
            single_threaded: false,
        }
    }
}

impl RasterConfig {
    /// No contribution cutoff, no early termination, unbounded kernel support,
    /// and a normalization floor far below any coverage that matters. Every
    /// pixel then depends smoothly on every visible Gaussian.
    pub fn smooth() -> Self {
        Self {
            min_contribution: 0.0,
            min_transmittance: 0.0,
            kernel_cutoff: f64::INFINITY,
            norm_eps: 1e-30,
            ..Self::default()
        }
    }
}

/// A Gaussian after time evaluation and projection to the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub mu2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d` as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: Vector3<f64>,
    pub alpha_t: f64,
    pub vel_scalar: f64,
    /// Squared Mahalanobis distance beyond which the splat cannot contribute:
    /// the kernel cutoff, tightened where `alpha_t · G` falls below the
    /// contribution threshold.
    pub cutoff_sq: f64,
    /// Half-widths in pixels of the support ellipse's bounding box.
    pub extent: Vector2<f64>,
    pub source_id: usize,
}

/// Everything the backward pass needs to re-derive the forward computation.
#[derive(Clone, Debug)]
pub struct ViewContext {
    pub view: View,
    pub intrinsics: CameraIntrinsics,
    pub time: f64,
    pub scene_generation: u64,
}

/// Per-pixel blend order and extent, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BackwardState {
    /// Projected Gaussians sorted by depth.
    pub projected: Vec<ProjectedGaussian>,
    /// Per tile, indices into `projected` in blend order.
    pub tile_lists: Vec<Vec<u32>>,
    /// Per pixel, how many entries of its tile list were traversed.
    pub traversed: Vec<u32>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub config: RasterConfig,
    pub context: Option<ViewContext>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: ColorImage,
    /// Alpha-normalized expected depth.
    pub depth: Plane,
    /// Alpha-normalized velocity scalar.
    pub velocity: Plane,
    pub alpha_acc: Plane,
    pub backward_state: BackwardState,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }
}

/// Projects and rasterizes the full scene.
pub fn render(
    scene: &GaussianScene,
    pose: &CameraPose,
    delta: &PoseDelta,
    k: &CameraIntrinsics,
    t: f64,
    cfg: &RasterConfig,
) -> RenderOutput {
    let view = View::new(pose, delta);
    let projected = project(scene, &view, k, t, cfg);
    with_context(rasterize(projected, k, cfg), scene, view, k, t)
}

/// Renders only the Gaussians classified static by the velocity threshold.
pub fn render_static_only(
    scene: &GaussianScene,
    pose: &CameraPose,
    delta: &PoseDelta,
    k: &CameraIntrinsics,
    t: f64,
    cfg: &RasterConfig,
) -> RenderOutput {
    let (static_ids, _) = split_static_dynamic(scene);
    render_subset(scene, &static_ids, pose, delta, k, t, cfg)
}

/// Renders the Gaussians listed in `ids`; gradients still index the full scene.
pub fn render_subset(
    scene: &GaussianScene,
    ids: &[usize],
    pose: &CameraPose,
    delta: &PoseDelta,
    k: &CameraIntrinsics,
    t: f64,
    cfg: &RasterConfig,
) -> RenderOutput {
    let view = View::new(pose, delta);
    let projected = project_subset(scene, ids, &view, k, t, cfg);
    with_context(rasterize(projected, k, cfg), scene, view, k, t)
}

fn with_context(
    mut out: RenderOutput,
    scene: &GaussianScene,
    view: View,
    k: &CameraIntrinsics,
    t: f64,
) -> RenderOutput {
    out.backward_state.context = Some(ViewContext {
        view,
        intrinsics: *k,
        time: t,
        scene_generation: scene.generation(),
    });
    out
}

pub(crate) fn run_tiles<T: Send>(
    n: usize,
    single_threaded: bool,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Vec<T> {
    use rayon::prelude::*;
    if single_threaded {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}
