use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::forward::{kernel, tile_geometry};
use super::project::{compute, Projection};
use super::{run_tiles, RenderOutput};
use crate::buffer::{ColorImage, Plane};
use crate::camera::{CameraIntrinsics, View};
use crate::error::{Error, Result};
use crate::lie::quat_to_matrix_backward;
use crate::scene::{
    eval_at_time_backward, layout, velocity_scalar_grad, DynamicGaussian, GaussianScene,
    ParamGroup, SceneConfig, PARAM_LEN,
};
use crate::sh::num_coeffs;

/// Upstream gradients w.r.t. the rendered buffers.
#[derive(Clone, Debug)]
pub struct RenderGrads {
    pub color: ColorImage,
    pub depth: Plane,
    pub velocity: Plane,
}

impl RenderGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: ColorImage::new(width, height),
            depth: Plane::new(width, height),
            velocity: Plane::new(width, height),
        }
    }
}

/// Gradients for every Gaussian (flat layout, see [`crate::scene::layout`])
/// and for the view's pose increment.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrads {
    pub gaussians: Vec<[f64; PARAM_LEN]>,
    /// `(omega, upsilon)`
    pub pose: [f64; 6],
    /// Norm of the gradient w.r.t. each Gaussian's projected 2D mean.
    pub screen_grad: Vec<f64>,
    /// Whether the Gaussian was projected into the view.
    pub visible: Vec<bool>,
}

impl SceneGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            gaussians: vec![[0.0; PARAM_LEN]; n],
            pose: [0.0; 6],
            screen_grad: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn add_assign(&mut self, other: &SceneGrads) {
        for (a, b) in self.gaussians.iter_mut().zip(&other.gaussians) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.pose.iter_mut().zip(&other.pose) {
            *x += y;
        }
        for (x, y) in self.screen_grad.iter_mut().zip(&other.screen_grad) {
            *x += y;
        }
        for (x, y) in self.visible.iter_mut().zip(&other.visible) {
            *x |= *y;
        }
    }

    /// Values of one parameter group for every Gaussian, concatenated.
    pub fn group(&self, group: ParamGroup) -> Vec<f64> {
        let r = group.range();
        self.gaussians.iter().flat_map(|g| g[r.clone()].to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.gaussians.iter().all(|g| g.iter().all(|x| x.is_finite()))
            && self.pose.iter().all(|x| x.is_finite())
    }
}

/// Gradients split by the loss term they came from: `main` carries the color
/// and depth pathways, `motion` the velocity-map pathway.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedGrads {
    pub main: SceneGrads,
    pub motion: SceneGrads,
}

impl TaggedGrads {
    pub fn sum(&self) -> SceneGrads {
        let mut out = self.main.clone();
        out.add_assign(&self.motion);
        out
    }
}

/// Keeps only the velocity gradients of the motion term and adds them to the
/// other terms' gradients. Motion-term gradients on position, shape, color,
/// opacity, life peak, decay, and pose are discarded.
pub fn apply_frozen_rule(tagged: &TaggedGrads) -> SceneGrads {
    let mut out = tagged.main.clone();
    let r = ParamGroup::Velocity.range();
    for (a, b) in out.gaussians.iter_mut().zip(&tagged.motion.gaussians) {
        for i in r.clone() {
            a[i] += b[i];
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default)]
struct Grad2D {
    mean: Vector2<f64>,
    /// `(a, b, c)` of the conic, with `b` as one symmetric parameter.
    conic: [f64; 3],
    color: Vector3<f64>,
    alpha: f64,
    depth: f64,
    vel: f64,
}

impl Grad2D {
    fn add(&mut self, o: &Grad2D) {
        self.mean += o.mean;
        for i in 0..3 {
            self.conic[i] += o.conic[i];
        }
        self.color += o.color;
        self.alpha += o.alpha;
        self.depth += o.depth;
        self.vel += o.vel;
    }
}

struct Contribution {
    slot: usize,
    a: f64,
    g: f64,
    trans: f64,
    dx: f64,
    dy: f64,
}

/// Backward pass with gradients kept separate per loss pathway.
pub fn rasterize_backward_tagged(
    out: &RenderOutput,
    scene: &GaussianScene,
    grads: &RenderGrads,
) -> Result<TaggedGrads> {
    let state = &out.backward_state;
    let ctx = state.context.as_ref().ok_or(Error::MissingContext)?;
    if ctx.scene_generation != scene.generation() {
        return Err(Error::StaleState {
            expected: ctx.scene_generation,
            found: scene.generation(),
        });
    }
    let (w, h) = (out.width(), out.height());
    if grads.color.width != w || grads.color.height != h {
        return Err(Error::ShapeMismatch(format!(
            "color gradient {}x{} vs render {w}x{h}",
            grads.color.width, grads.color.height
        )));
    }
    grads.depth.same_shape(&out.depth)?;
    grads.velocity.same_shape(&out.velocity)?;

    let cfg = &state.config;
    let ts = cfg.tile_size.max(1);
    let proj = &state.projected;

    let per_tile = run_tiles(state.tile_lists.len(), cfg.single_threaded, |tile| {
        let list = &state.tile_lists[tile];
        let mut acc = vec![[Grad2D::default(); 2]; list.len()];
        let geo = tile_geometry(tile, state.tiles_x, ts, w, h);
        let mut contribs: Vec<Contribution> = Vec::new();
        for py in geo.y0..geo.y1 {
            for px in geo.x0..geo.x1 {
                let idx = py * w + px;
                let gc = grads.color.data[idx];
                let gd = grads.depth.data[idx];
                let gv = grads.velocity.data[idx];
                if gc == Vector3::zeros() && gd == 0.0 && gv == 0.0 {
                    continue;
                }
                contribs.clear();
                let mut trans = 1.0;
                let mut sum_w = 0.0;
                for (slot, &gi) in list.iter().enumerate().take(state.traversed[idx] as usize) {
                    let p = &proj[gi as usize];
                    let Some((g, dx, dy)) = kernel(p, px as f64, py as f64) else {
                        continue;
                    };
                    let a = p.alpha_t * g;
                    if a < cfg.min_contribution {
                        continue;
                    }
                    contribs.push(Contribution {
                        slot,
                        a,
                        g,
                        trans,
                        dx,
                        dy,
                    });
                    sum_w += a * trans;
                    trans *= 1.0 - a;
                }
                let normalized = sum_w > cfg.norm_eps;
                let norm = sum_w.max(cfg.norm_eps);
                let depth = out.depth.data[idx];
                let vel = out.velocity.data[idx];

                let (mut rest_c, mut rest_d, mut rest_v, mut rest_a) =
                    (Vector3::zeros(), 0.0, 0.0, 0.0);
                for c in contribs.iter().rev() {
                    let p = &proj[list[c.slot] as usize];
                    let d_color = (p.color - rest_c) * c.trans;
                    let d_num_d = c.trans * (p.depth - rest_d);
                    let d_num_v = c.trans * (p.vel_scalar - rest_v);
                    let d_acc = c.trans * (1.0 - rest_a);
                    let (d_depth, d_vel) = if normalized {
                        ((d_num_d - depth * d_acc) / norm, (d_num_v - vel * d_acc) / norm)
                    } else {
                        (d_num_d / norm, d_num_v / norm)
                    };
                    let wgt = c.a * c.trans;
                    let ga_main = gc.dot(&d_color) + gd * d_depth;
                    let ga_motion = gv * d_vel;

                    let slot = &mut acc[c.slot];
                    slot[0].color += gc * wgt;
                    slot[0].depth += gd * wgt / norm;
                    slot[1].vel += gv * wgt / norm;
                    let [ca, cb, cc] = p.conic;
                    for (tag, ga) in [(0usize, ga_main), (1, ga_motion)] {
                        if ga == 0.0 {
                            continue;
                        }
                        let s = &mut slot[tag];
                        s.alpha += ga * c.g;
                        let gg = ga * p.alpha_t * c.g;
                        s.mean += Vector2::new(ca * c.dx + cb * c.dy, cb * c.dx + cc * c.dy) * gg;
                        s.conic[0] += -0.5 * gg * c.dx * c.dx;
                        s.conic[1] += -gg * c.dx * c.dy;
                        s.conic[2] += -0.5 * gg * c.dy * c.dy;
                    }

                    rest_c = p.color * c.a + rest_c * (1.0 - c.a);
                    rest_d = c.a * p.depth + (1.0 - c.a) * rest_d;
                    rest_v = c.a * p.vel_scalar + (1.0 - c.a) * rest_v;
                    rest_a = c.a + (1.0 - c.a) * rest_a;
                }
            }
        }
        acc
    });

    let mut per_proj = vec![[Grad2D::default(); 2]; proj.len()];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (slot, &gi) in state.tile_lists[tile].iter().enumerate() {
            let dst = &mut per_proj[gi as usize];
            dst[0].add(&acc[slot][0]);
            dst[1].add(&acc[slot][1]);
        }
    }

    let n = scene.len();
    let gs = scene.gaussians();
    let chained = run_tiles(proj.len(), cfg.single_threaded, |i| {
        let id = proj[i].source_id;
        let projection = compute(&gs[id], &ctx.view, &ctx.intrinsics, ctx.time, &scene.config, cfg);
        projection.map(|pr| {
            let main = chain(&gs[id], &pr, &per_proj[i][0], &ctx.view, &ctx.intrinsics, &scene.config);
            let motion = chain(&gs[id], &pr, &per_proj[i][1], &ctx.view, &ctx.intrinsics, &scene.config);
            (id, per_proj[i][0].mean.norm(), per_proj[i][1].mean.norm(), main, motion)
        })
    });

    let mut tagged = TaggedGrads {
        main: SceneGrads::zeros(n),
        motion: SceneGrads::zeros(n),
    };
    let mut pose_parts = [(Matrix3::zeros(), Vector3::zeros(), Vector3::zeros()); 2];
    for (id, sg_main, sg_motion, main, motion) in chained.into_iter().flatten() {
        for (tag, (sg, part)) in [(sg_main, main), (sg_motion, motion)].into_iter().enumerate() {
            let dst = if tag == 0 { &mut tagged.main } else { &mut tagged.motion };
            dst.gaussians[id] = part.params;
            dst.screen_grad[id] = sg;
            dst.visible[id] = true;
            pose_parts[tag].0 += part.rot_cw;
            pose_parts[tag].1 += part.trans_cw;
            pose_parts[tag].2 += part.center;
        }
    }
    tagged.main.pose = ctx.view.delta_backward(&pose_parts[0].0, &pose_parts[0].1, &pose_parts[0].2);
    tagged.motion.pose = ctx.view.delta_backward(&pose_parts[1].0, &pose_parts[1].1, &pose_parts[1].2);
    Ok(tagged)
}

/// Backward pass summing all pathways.
pub fn rasterize_backward(
    out: &RenderOutput,
    scene: &GaussianScene,
    grads: &RenderGrads,
) -> Result<SceneGrads> {
    Ok(rasterize_backward_tagged(out, scene, grads)?.sum())
}

struct ChainedGrad {
    params: [f64; PARAM_LEN],
    rot_cw: Matrix3<f64>,
    trans_cw: Vector3<f64>,
    center: Vector3<f64>,
}

fn chain(
    g: &DynamicGaussian,
    pr: &Projection,
    g2: &Grad2D,
    view: &View,
    k: &CameraIntrinsics,
    scene_cfg: &SceneConfig,
) -> ChainedGrad {
    let mut params = [0.0; PARAM_LEN];

    // conic -> 2D covariance -> (J W) and 3D covariance
    let gq = Matrix2::new(g2.conic[0], 0.5 * g2.conic[1], 0.5 * g2.conic[1], g2.conic[2]);
    let g_cov = -(pr.conic * gq * pr.conic);
    let g_cov_sym = g_cov + g_cov.transpose();
    let g_proj = g_cov_sym * pr.proj * pr.sigma;
    let g_sigma = pr.proj.transpose() * g_cov * pr.proj;
    let g_jac = g_proj * view.rot_cw.transpose();
    let mut g_rot_cw = pr.jac.transpose() * g_proj;

    // camera-space point: 2D mean, Jacobian entries, depth
    let (x, y, z) = (pr.p_cam.x, pr.p_cam.y, pr.p_cam.z);
    let mut g_pc = pr.jac.transpose() * g2.mean;
    let z2 = z * z;
    let z3 = z2 * z;
    g_pc.x += -k.fx / z2 * g_jac[(0, 2)];
    g_pc.y += -k.fy / z2 * g_jac[(1, 2)];
    g_pc.z += -k.fx / z2 * g_jac[(0, 0)] + 2.0 * k.fx * x / z3 * g_jac[(0, 2)]
        - k.fy / z2 * g_jac[(1, 1)]
        + 2.0 * k.fy * y / z3 * g_jac[(1, 2)];
    g_pc.z += g2.depth;
    g_rot_cw += g_pc * pr.ev.mu_t.transpose();
    let g_trans_cw = g_pc;
    let mut g_mu_t = view.rot_cw.transpose() * g_pc;

    // view-dependent color
    let mut g_center = Vector3::zeros();
    let g_raw = Vector3::from_fn(|c, _| {
        let v = pr.raw_color[c];
        if (-1e-9..=1.0 + 1e-9).contains(&v) {
            g2.color[c]
        } else {
            0.0
        }
    });
    if g_raw != Vector3::zeros() {
        let mut g_dir = Vector3::zeros();
        for kk in 0..num_coeffs(scene_cfg.sh_degree) {
            let o = layout::SH + 3 * kk;
            let gsh = g_raw * pr.basis[kk];
            params[o..o + 3].copy_from_slice(gsh.as_slice());
            g_dir += pr.basis_grad[kk] * g.sh[kk].dot(&g_raw);
        }
        if pr.dir_norm > 0.0 {
            let g_d = (g_dir - pr.dir * pr.dir.dot(&g_dir)) / pr.dir_norm;
            g_mu_t += g_d;
            g_center -= g_d;
        }
    }

    // covariance factors
    let m = pr.rot * Matrix3::from_diagonal(&pr.scale);
    let g_m = (g_sigma + g_sigma.transpose()) * m;
    let mut g_rot = Matrix3::zeros();
    for j in 0..3 {
        let mut gs = 0.0;
        for i in 0..3 {
            gs += g_m[(i, j)] * pr.rot[(i, j)];
            g_rot[(i, j)] = g_m[(i, j)] * pr.scale[j];
        }
        params[layout::LOG_SCALE + j] = gs * pr.scale[j];
    }
    let gq4 = quat_to_matrix_backward(&g.rot_q, &g_rot);
    params[layout::ROT..layout::ROT + 4].copy_from_slice(gq4.as_slice());

    // temporal model
    let tg = eval_at_time_backward(g, &pr.ev, &g_mu_t, g2.alpha);
    let gv = tg.v + velocity_scalar_grad(g, scene_cfg) * g2.vel;
    params[layout::MU..layout::MU + 3].copy_from_slice(tg.mu.as_slice());
    params[layout::VELOCITY..layout::VELOCITY + 3].copy_from_slice(gv.as_slice());
    params[layout::TAU] = tg.tau;
    params[layout::LOG_BETA] = tg.log_beta;
    params[layout::OPACITY] = tg.logit_opacity;

    ChainedGrad {
        params,
        rot_cw: g_rot_cw,
        trans_cw: g_trans_cw,
        center: g_center,
    }
}
