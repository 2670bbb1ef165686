use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{run_tiles, ProjectedGaussian, RasterConfig};
use crate::camera::{CameraIntrinsics, View};
use crate::lie::quat_to_matrix;
use crate::scene::{eval_at_time, velocity_scalar, DynamicGaussian, GaussianScene, SceneConfig, TimeEval};
use crate::sh::{basis_with_grad, num_coeffs, MAX_SH_COEFFS};

/// Intermediate values of one Gaussian's projection, shared by the forward
/// and backward passes.
pub(super) struct Projection {
    pub ev: TimeEval,
    pub p_cam: Vector3<f64>,
    pub jac: Matrix2x3<f64>,
    pub rot: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub sigma: Matrix3<f64>,
    /// `J · W`
    pub proj: Matrix2x3<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub mu2d: Vector2<f64>,
    pub dir: Vector3<f64>,
    pub dir_norm: f64,
    pub basis: [f64; MAX_SH_COEFFS],
    pub basis_grad: [Vector3<f64>; MAX_SH_COEFFS],
    pub raw_color: Vector3<f64>,
    pub vel_scalar: f64,
}

pub(super) fn compute(
    g: &DynamicGaussian,
    view: &View,
    k: &CameraIntrinsics,
    t: f64,
    scene_cfg: &SceneConfig,
    cfg: &RasterConfig,
) -> Option<Projection> {
    let ev = eval_at_time(g, t, scene_cfg);
    let p_cam = view.to_camera(&ev.mu_t);
    if !(p_cam.z > k.znear) {
        return None;
    }
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let jac = Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * x / (z * z),
        0.0,
        k.fy / z,
        -k.fy * y / (z * z),
    );
    let rot = quat_to_matrix(&g.rot_q);
    let scale = g.scale();
    let m = rot * Matrix3::from_diagonal(&scale);
    let sigma = m * m.transpose();
    let proj = jac * view.rot_cw;
    let cov2d = proj * sigma * proj.transpose() + Matrix2::identity() * cfg.lowpass;
    let conic = cov2d.try_inverse()?;
    let mu2d = k.project(&p_cam);

    let d = ev.mu_t - view.center;
    let dir_norm = d.norm();
    let dir = if dir_norm > 0.0 { d / dir_norm } else { Vector3::z() };
    let (basis, basis_grad) = basis_with_grad(scene_cfg.sh_degree, &dir);
    let mut raw_color = Vector3::repeat(0.5);
    for (b, c) in basis.iter().zip(&g.sh).take(num_coeffs(scene_cfg.sh_degree)) {
        raw_color += c * *b;
    }
    Some(Projection {
        ev,
        p_cam,
        jac,
        rot,
        scale,
        sigma,
        proj,
        cov2d,
        conic,
        mu2d,
        dir,
        dir_norm,
        basis,
        basis_grad,
        raw_color,
        vel_scalar: velocity_scalar(g, scene_cfg),
    })
}

/// Bounding box half-widths of `{d : dᵀ Σ⁻¹ d <= cutoff_sq}`.
fn support_extent(cov: &Matrix2<f64>, cutoff_sq: f64) -> Vector2<f64> {
    Vector2::new((cutoff_sq * cov[(0, 0)]).sqrt(), (cutoff_sq * cov[(1, 1)]).sqrt())
}

/// `None` when the splat cannot reach the contribution threshold anywhere.
fn effective_cutoff_sq(alpha_t: f64, cfg: &RasterConfig) -> Option<f64> {
    let c2 = cfg.kernel_cutoff * cfg.kernel_cutoff;
    if cfg.min_contribution <= 0.0 {
        return Some(c2);
    }
    if !(alpha_t >= cfg.min_contribution) {
        return None;
    }
    // small slack keeps the bound conservative under rounding of exp
    Some(c2.min(2.0 * (alpha_t / cfg.min_contribution).ln() + 1e-9))
}

fn to_projected(
    p: &Projection,
    id: usize,
    k: &CameraIntrinsics,
    cfg: &RasterConfig,
) -> Option<ProjectedGaussian> {
    let cutoff_sq = effective_cutoff_sq(p.ev.alpha_t, cfg)?;
    let extent = support_extent(&p.cov2d, cutoff_sq);
    let (w, h) = (k.width as f64, k.height as f64);
    if p.mu2d.x + extent.x < 0.0
        || p.mu2d.x - extent.x > w - 1.0
        || p.mu2d.y + extent.y < 0.0
        || p.mu2d.y - extent.y > h - 1.0
    {
        return None;
    }
    Some(ProjectedGaussian {
        mu2d: p.mu2d,
        cov2d: p.cov2d,
        conic: [p.conic[(0, 0)], p.conic[(0, 1)], p.conic[(1, 1)]],
        depth: p.p_cam.z,
        color: p.raw_color.map(|c| c.clamp(0.0, 1.0)),
        alpha_t: p.ev.alpha_t,
        vel_scalar: p.vel_scalar,
        cutoff_sq,
        extent,
        source_id: id,
    })
}

/// Evaluates every Gaussian at time `t` and projects it into `view`, culling
/// those behind the near plane or whose support misses the image.
pub fn project(
    scene: &GaussianScene,
    view: &View,
    k: &CameraIntrinsics,
    t: f64,
    cfg: &RasterConfig,
) -> Vec<ProjectedGaussian> {
    let gs = scene.gaussians();
    run_tiles(gs.len(), cfg.single_threaded, |i| {
        compute(&gs[i], view, k, t, &scene.config, cfg).and_then(|p| to_projected(&p, i, k, cfg))
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Like [`project`] restricted to `ids`; `source_id` keeps the scene index.
pub fn project_subset(
    scene: &GaussianScene,
    ids: &[usize],
    view: &View,
    k: &CameraIntrinsics,
    t: f64,
    cfg: &RasterConfig,
) -> Vec<ProjectedGaussian> {
    let gs = scene.gaussians();
    run_tiles(ids.len(), cfg.single_threaded, |j| {
        let i = ids[j];
        compute(&gs[i], view, k, t, &scene.config, cfg).and_then(|p| to_projected(&p, i, k, cfg))
    })
    .into_iter()
    .flatten()
    .collect()
}
