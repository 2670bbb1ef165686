//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use dynsplat::buffer::{ColorImage, Plane};
use dynsplat::camera::{CameraIntrinsics, CameraPose, PoseDelta};
use dynsplat::raster::{render, ProjectedGaussian, RasterConfig, RenderGrads, RenderOutput};
use dynsplat::scene::{layout, DynamicGaussian, GaussianScene, ParamGroup, SceneConfig};
use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_pose(rng: &mut ChaCha8Rng, timestamp: f64) -> CameraPose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let r = UnitQuaternion::from_scaled_axis(axis * 0.5);
    let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    CameraPose::new(r, t, timestamp)
}

/// Gaussians placed in front of `pose`, sized to cover a few pixels at
/// `focal`, with colors kept away from the clamp boundaries.
pub fn random_scene(rng: &mut ChaCha8Rng, n: usize, pose: &CameraPose, spread: f64, cfg: SceneConfig) -> GaussianScene {
    let mut gs = Vec::with_capacity(n);
    for _ in 0..n {
        let depth = rng.random_range(3.0..6.0);
        let p_cam = Vector3::new(
            rng.random_range(-spread..spread) * depth,
            rng.random_range(-spread..spread) * depth,
            depth,
        );
        let mut g = DynamicGaussian {
            mu: pose.transform_point(&p_cam),
            log_scale: Vector3::new(
                rng.random_range(-2.2..-1.2),
                rng.random_range(-2.2..-1.2),
                rng.random_range(-2.2..-1.2),
            ),
            rot_q: Vector4::new(
                rng.random_range(0.5..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ),
            logit_opacity: rng.random_range(-1.0..1.5),
            v: Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)),
            tau: rng.random_range(0.3..0.7),
            log_beta: rng.random_range(-1.5..-0.5),
            ..Default::default()
        };
        for c in 0..dynsplat::sh::num_coeffs(cfg.sh_degree) {
            let amp = if c == 0 { 0.6 } else { 0.1 };
            g.sh[c] = Vector3::new(
                rng.random_range(-amp..amp),
                rng.random_range(-amp..amp),
                rng.random_range(-amp..amp),
            );
        }
        gs.push(g);
    }
    GaussianScene::from_gaussians(cfg, gs)
}

/// Random linear functional over the rendered buffers.
pub struct LinearLoss {
    pub grads: RenderGrads,
}

impl LinearLoss {
    pub fn random(rng: &mut ChaCha8Rng, w: usize, h: usize, color: bool, depth: bool, velocity: bool) -> Self {
        let mut grads = RenderGrads::zeros(w, h);
        if color {
            grads.color = ColorImage::from_fn(w, h, |_, _| {
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
        }
        if depth {
            grads.depth = Plane::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0));
        }
        if velocity {
            grads.velocity = Plane::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0));
        }
        Self { grads }
    }

    pub fn eval(&self, out: &RenderOutput) -> f64 {
        let mut s = 0.0;
        for (a, b) in out.color.data.iter().zip(&self.grads.color.data) {
            s += a.dot(b);
        }
        for (a, b) in out.depth.data.iter().zip(&self.grads.depth.data) {
            s += a * b;
        }
        for (a, b) in out.velocity.data.iter().zip(&self.grads.velocity.data) {
            s += a * b;
        }
        s
    }
}

pub fn with_param(scene: &GaussianScene, id: usize, slot: usize, value: f64) -> GaussianScene {
    let mut gs = scene.gaussians().to_vec();
    let mut flat = gs[id].to_flat();
    flat[slot] = value;
    gs[id] = DynamicGaussian::read_flat(&flat);
    GaussianScene::from_gaussians(scene.config.clone(), gs)
}

/// Flat slots that influence rendering at the scene's SH degree.
pub fn active_slots(group: ParamGroup, sh_degree: usize) -> Vec<usize> {
    let r = group.range();
    match group {
        ParamGroup::Sh => (layout::SH..layout::SH + 3 * dynsplat::sh::num_coeffs(sh_degree)).collect(),
        _ => r.collect(),
    }
}

/// `‖a − f‖ / max(‖a‖, ‖f‖, floor)`
pub fn rel_error(a: &[f64], f: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(f).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nf: f64 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nf).max(floor)
}

pub struct FdCase {
    pub scene: GaussianScene,
    pub pose: CameraPose,
    pub delta: PoseDelta,
    pub k: CameraIntrinsics,
    pub t: f64,
    pub cfg: RasterConfig,
}

impl FdCase {
    pub fn render(&self, scene: &GaussianScene, delta: &PoseDelta) -> RenderOutput {
        render(scene, &self.pose, delta, &self.k, self.t, &self.cfg)
    }

    /// Central-difference gradients for every Gaussian parameter class and
    /// the pose delta, returned as `(class name, analytic, numeric)`.
    pub fn compare(&self, loss: &LinearLoss, h: f64) -> Vec<(String, Vec<f64>, Vec<f64>)> {
        let out = self.render(&self.scene, &self.delta);
        let grads = dynsplat::raster::rasterize_backward(&out, &self.scene, &loss.grads).unwrap();
        let mut rows = Vec::new();
        for group in ParamGroup::ALL {
            let mut a = Vec::new();
            let mut f = Vec::new();
            for id in 0..self.scene.len() {
                let base = self.scene.gaussians()[id].to_flat();
                for slot in active_slots(group, self.scene.config.sh_degree) {
                    let sp = with_param(&self.scene, id, slot, base[slot] + h);
                    let sn = with_param(&self.scene, id, slot, base[slot] - h);
                    let lp = loss.eval(&self.render(&sp, &self.delta));
                    let ln = loss.eval(&self.render(&sn, &self.delta));
                    a.push(grads.gaussians[id][slot]);
                    f.push((lp - ln) / (2.0 * h));
                }
            }
            rows.push((group.name().to_string(), a, f));
        }
        let mut a = Vec::new();
        let mut f = Vec::new();
        for j in 0..6 {
            let mut dp = self.delta.to_array();
            let mut dn = dp;
            dp[j] += h;
            dn[j] -= h;
            let lp = loss.eval(&self.render(&self.scene, &PoseDelta::from_slice(&dp)));
            let ln = loss.eval(&self.render(&self.scene, &PoseDelta::from_slice(&dn)));
            a.push(grads.pose[j]);
            f.push((lp - ln) / (2.0 * h));
        }
        rows.push(("pose_delta".to_string(), a, f));
        rows
    }
}

/// Per-pixel dense blend over every projected Gaussian: no tiles, no early
/// termination. Kernel truncation and the contribution floor follow `cfg`.
pub fn dense_oracle(projected: &[ProjectedGaussian], w: usize, h: usize, cfg: &RasterConfig) -> (ColorImage, Plane, Plane, Plane) {
    let mut order: Vec<&ProjectedGaussian> = projected.iter().collect();
    order.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.source_id.cmp(&b.source_id)));
    let mut color = ColorImage::new(w, h);
    let mut depth = Plane::new(w, h);
    let mut vel = Plane::new(w, h);
    let mut alpha = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut t = 1.0;
            let mut c = Vector3::zeros();
            let (mut d, mut v, mut acc) = (0.0, 0.0, 0.0);
            for p in &order {
                let inv = p.cov2d.try_inverse().unwrap();
                let dxy = nalgebra::Vector2::new(x as f64 - p.mu2d.x, y as f64 - p.mu2d.y);
                let m2 = dxy.dot(&(inv * dxy));
                if m2 > cfg.kernel_cutoff * cfg.kernel_cutoff {
                    continue;
                }
                let a = p.alpha_t * (-0.5 * m2).exp();
                if a < cfg.min_contribution {
                    continue;
                }
                let wgt = a * t;
                c += p.color * wgt;
                d += p.depth * wgt;
                v += p.vel_scalar * wgt;
                acc += wgt;
                t *= 1.0 - a;
            }
            let norm = acc.max(cfg.norm_eps);
            color.set(x, y, c);
            depth.set(x, y, d / norm);
            vel.set(x, y, v / norm);
            alpha.set(x, y, acc);
        }
    }
    (color, depth, vel, alpha)
}
