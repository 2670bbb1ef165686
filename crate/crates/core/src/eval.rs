//! Image-quality and trajectory-accuracy metrics.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::buffer::{check_shape, ColorImage, Mask};
use crate::camera::{CameraPose, Trajectory};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio for images in `[0, 1]`; `+∞` when identical.
pub fn psnr(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    a.same_shape(b)?;
    let n = (a.data.len() * 3) as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub(crate) fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" correlation with the SSIM window.
fn conv_valid(src: &[f64], w: usize, h: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = win.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, wk) in win.iter().enumerate() {
                s += wk * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Adjoint of [`conv_valid`].
fn conv_valid_adjoint(g: &[f64], w: usize, h: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = g[y * ow + x];
            for (k, wk) in win.iter().enumerate() {
                tmp[(y + k) * ow + x] += wk * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (k, wk) in win.iter().enumerate() {
                out[y * w + x + k] += wk * v;
            }
        }
    }
    out
}

/// Mean SSIM over all valid window positions and channels, and optionally its
/// gradient w.r.t. `a`.
pub fn ssim_with_grad(a: &ColorImage, b: &ColorImage, want_grad: bool) -> Result<(f64, Option<ColorImage>)> {
    a.same_shape(b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let win = gaussian_window();
    let positions = (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
    let norm = 1.0 / (positions * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| ColorImage::new(w, h));
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = conv_valid(&x, w, h, &win);
        let my = conv_valid(&y, w, h, &win);
        let exx = conv_valid(&xx, w, h, &win);
        let eyy = conv_valid(&yy, w, h, &win);
        let exy = conv_valid(&xy, w, h, &win);
        let mut g_mx = vec![0.0; positions];
        let mut g_xx = vec![0.0; positions];
        let mut g_xy = vec![0.0; positions];
        for i in 0..positions {
            let (ux, uy) = (mx[i], my[i]);
            let sxx = exx[i] - ux * ux;
            let syy = eyy[i] - uy * uy;
            let sxy = exy[i] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let d_sxx = -s / b2;
                let d_sxy = 2.0 * a1 / (b1 * b2);
                let d_ux = 2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1;
                g_xx[i] = d_sxx * norm;
                g_xy[i] = d_sxy * norm;
                g_mx[i] = (d_ux - 2.0 * ux * d_sxx - uy * d_sxy) * norm;
            }
        }
        if let Some(gimg) = grad.as_mut() {
            let t_mx = conv_valid_adjoint(&g_mx, w, h, &win);
            let t_xx = conv_valid_adjoint(&g_xx, w, h, &win);
            let t_xy = conv_valid_adjoint(&g_xy, w, h, &win);
            for p in 0..w * h {
                gimg.data[p][c] = t_mx[p] + 2.0 * x[p] * t_xx[p] + y[p] * t_xy[p];
            }
        }
    }
    Ok((total * norm, grad))
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over channels.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    Ok(ssim_with_grad(a, b, false)?.0)
}

/// Intersection over union of two binary masks; 1 when both are empty.
pub fn mask_iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.same_shape(gt)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Similarity transform `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// Maps a camera pose: rotation is premultiplied, position transformed.
    pub fn apply_pose(&self, p: &CameraPose) -> CameraPose {
        CameraPose::new(self.rotation * p.r, self.apply_point(&p.t), p.timestamp)
    }

    pub fn inverse(&self) -> Self {
        let ri = self.rotation.inverse();
        Self {
            scale: 1.0 / self.scale,
            rotation: ri,
            translation: -(ri * self.translation) / self.scale,
        }
    }

    pub fn compose(&self, other: &Sim3) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply_point(&other.translation),
        }
    }
}

/// Closed-form least-squares similarity aligning `est` onto `gt` point sets.
pub fn umeyama_points(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Sim3> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: est.len(),
            right: gt.len(),
        });
    }
    let n = est.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!("need at least 3 correspondences, got {n}")));
    }
    let nf = n as f64;
    let mx = est.iter().sum::<Vector3<f64>>() / nf;
    let my = gt.iter().sum::<Vector3<f64>>() / nf;
    let var_x = est.iter().map(|x| (x - mx).norm_squared()).sum::<f64>() / nf;
    let var_y = gt.iter().map(|y| (y - my).norm_squared()).sum::<f64>() / nf;
    if var_x < 1e-24 || var_y < 1e-24 {
        return Err(Error::DegenerateGeometry("coincident points".into()));
    }
    let mut cov = Matrix3::zeros();
    for (x, y) in est.iter().zip(gt) {
        cov += (y - my) * (x - mx).transpose();
    }
    cov /= nf;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..3).collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0));
    if sv[1].0 <= 1e-10 * sv[0].0 {
        return Err(Error::DegenerateGeometry("collinear points".into()));
    }
    let mut s = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        // flip the axis of the smallest singular value
        s[(sv[2].1, sv[2].1)] = -1.0;
    }
    let r = u * s * vt;
    let trace_ds: f64 = (0..3).map(|i| svd.singular_values[i] * s[(i, i)]).sum();
    let scale = trace_ds / var_x;
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = my - rotation * mx * scale;
    Ok(Sim3 {
        scale,
        rotation,
        translation,
    })
}

/// Timestamp-matched pairs `(est_index, gt_index)` within `tol`.
pub fn match_timestamps(est: &Trajectory, gt: &Trajectory, tol: f64) -> (Vec<(usize, usize)>, usize) {
    let mut pairs = Vec::new();
    let mut dropped = 0;
    for (i, p) in est.poses.iter().enumerate() {
        let best = gt
            .poses
            .iter()
            .enumerate()
            .map(|(j, q)| (j, (q.timestamp - p.timestamp).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, d)) if d <= tol => pairs.push((i, j)),
            _ => dropped += 1,
        }
    }
    (pairs, dropped)
}

pub const TIMESTAMP_TOLERANCE: f64 = 1e-6;

fn matched(est: &Trajectory, gt: &Trajectory) -> (Trajectory, Trajectory) {
    let (pairs, dropped) = match_timestamps(est, gt, TIMESTAMP_TOLERANCE);
    if dropped > 0 {
        log::warn!("{dropped} estimated poses had no ground-truth match and were dropped");
    }
    (
        Trajectory::new(pairs.iter().map(|&(i, _)| est.poses[i]).collect()),
        Trajectory::new(pairs.iter().map(|&(_, j)| gt.poses[j]).collect()),
    )
}

/// Sim(3) aligning `est` to `gt` after timestamp matching.
pub fn umeyama_align(est: &Trajectory, gt: &Trajectory) -> Result<Sim3> {
    let (e, g) = matched(est, gt);
    umeyama_points(&e.positions(), &g.positions())
}

pub fn align_trajectory(est: &Trajectory, s: &Sim3) -> Trajectory {
    Trajectory::new(est.poses.iter().map(|p| s.apply_pose(p)).collect())
}

/// Root-mean-square position error of index-matched trajectories.
pub fn ate(est_aligned: &Trajectory, gt: &Trajectory) -> Result<f64> {
    if est_aligned.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: est_aligned.len(),
            right: gt.len(),
        });
    }
    if gt.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = est_aligned
        .poses
        .iter()
        .zip(&gt.poses)
        .map(|(a, b)| (a.t - b.t).norm_squared())
        .sum();
    Ok((sum / gt.len() as f64).sqrt())
}

/// Relative pose error at frame offset `delta`: `(100 × translational RMSE,
/// rotational RMSE in degrees)`.
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<(f64, f64)> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: est.len(),
            right: gt.len(),
        });
    }
    let delta = delta.max(1);
    if est.len() <= delta {
        return Err(Error::EmptyDataset(format!(
            "RPE needs more than {delta} frames, got {}",
            est.len()
        )));
    }
    let mut sum_t = 0.0;
    let mut sum_r = 0.0;
    let n = est.len() - delta;
    for i in 0..n {
        let rel_gt = gt.poses[i].inverse().compose(&gt.poses[i + delta]);
        let rel_est = est.poses[i].inverse().compose(&est.poses[i + delta]);
        let err = rel_gt.inverse().compose(&rel_est);
        sum_t += err.t.norm_squared();
        sum_r += err.angle().to_degrees().powi(2);
    }
    Ok((100.0 * (sum_t / n as f64).sqrt(), (sum_r / n as f64).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    /// Ground-truth units.
    pub ate_rmse: f64,
    /// Translational RPE scaled by 100.
    pub rpe_t: f64,
    /// Rotational RPE in degrees.
    pub rpe_r: f64,
}

/// Timestamp matching, Sim(3) alignment, then ATE and consecutive-frame RPE.
pub fn evaluate_trajectory(est: &Trajectory, gt: &Trajectory) -> Result<PoseMetrics> {
    let (e, g) = matched(est, gt);
    let s = umeyama_points(&e.positions(), &g.positions())?;
    let aligned = align_trajectory(&e, &s);
    let ate_rmse = ate(&aligned, &g)?;
    let (rpe_t, rpe_r) = rpe(&aligned, &g, 1)?;
    Ok(PoseMetrics {
        ate_rmse,
        rpe_t,
        rpe_r,
    })
}

/// Checks that two images share a shape; exposed for callers building their
/// own metric loops.
pub fn check_same_shape(a: &ColorImage, b: &ColorImage) -> Result<()> {
    check_shape(a.width, a.height, b.width, b.height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ColorImage {
        ColorImage::from_fn(w, h, |_, _| {
            Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>())
        })
    }

    #[test]
    fn psnr_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ColorImage::from_fn(8, 8, |_, _| Vector3::repeat(rng.random_range(0.0..0.9)));
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = ColorImage {
            data: a.data.iter().map(|p| p.add_scalar(1.0 / 255.0)).collect(),
            ..a.clone()
        };
        let v = psnr(&a, &b).unwrap();
        assert!((v - 20.0 * 255f64.log10()).abs() < 1e-9);
        assert!((v - 48.13).abs() < 0.01);
        assert!(psnr(&a, &ColorImage::new(4, 4)).is_err());
    }

    #[test]
    fn psnr_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 9, 7);
        let b = random_image(&mut rng, 9, 7);
        let mut se = 0.0;
        for i in 0..a.data.len() {
            for c in 0..3 {
                se += (a.data[i][c] - b.data[i][c]).powi(2);
            }
        }
        let expected = -10.0 * (se / (9.0 * 7.0 * 3.0)).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identical_and_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let gray = ColorImage::filled(16, 16, Vector3::repeat(0.5));
        assert!((ssim(&gray, &gray.clone()).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&ColorImage::new(8, 8), &ColorImage::new(8, 8)).is_err());
    }

    #[test]
    fn mask_iou_examples() {
        let mut a = Mask::new(4, 1);
        let mut b = Mask::new(4, 1);
        assert_eq!(mask_iou(&a, &b).unwrap(), 1.0);
        a.data[0] = true;
        b.data[1] = true;
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        // half overlap: a = {0,1}, b = {1,2} -> 1/3
        a.data[1] = true;
        b.data[2] = true;
        assert!((mask_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn umeyama_identity_on_equal_sets() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
        ];
        let s = umeyama_points(&pts, &pts).unwrap();
        assert!((s.scale - 1.0).abs() < 1e-12);
        assert!(s.rotation.angle() < 1e-12);
        assert!(s.translation.norm() < 1e-12);
    }

    #[test]
    fn umeyama_rejects_degenerate_sets() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(umeyama_points(&line, &line), Err(Error::DegenerateGeometry(_))));
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        assert!(matches!(umeyama_points(&same, &same), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn rpe_on_identical_is_zero() {
        let poses: Vec<_> = (0..5)
            .map(|i| CameraPose::new(UnitQuaternion::from_euler_angles(0.0, 0.1 * i as f64, 0.0), Vector3::new(i as f64, 0.0, 0.3), i as f64))
            .collect();
        let t = Trajectory::new(poses);
        assert_eq!(rpe(&t, &t, 1).unwrap(), (0.0, 0.0));
        assert_eq!(ate(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn ate_constant_offset() {
        let poses: Vec<_> = (0..5).map(|i| CameraPose::new(UnitQuaternion::identity(), Vector3::new(i as f64, 0.0, 0.0), i as f64)).collect();
        let gt = Trajectory::new(poses);
        let d = Vector3::new(0.3, -0.4, 1.2);
        let est = Trajectory::new(gt.poses.iter().map(|p| CameraPose::new(p.r, p.t + d, p.timestamp)).collect());
        assert!((ate(&est, &gt).unwrap() - d.norm()).abs() < 1e-12);
        assert!(ate(&est, &Trajectory::new(vec![])).is_err());
    }
}
