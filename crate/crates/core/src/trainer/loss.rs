//! Loss terms. Each returns its value and the gradient w.r.t. the rendered
//! buffer it reads.

use crate::buffer::{check_shape, ColorImage, Mask, Plane};
use crate::error::Result;
use crate::eval::ssim_with_grad;

/// `(1 − λ)·L1 + λ·(1 − SSIM)/2` against `gt`.
pub fn photometric_loss(render: &ColorImage, gt: &ColorImage, lambda_ssim: f64) -> Result<(f64, ColorImage)> {
    render.same_shape(gt)?;
    let n = (render.data.len() * 3) as f64;
    let mut l1 = 0.0;
    let mut grad = ColorImage::new(render.width, render.height);
    for ((r, g), d) in render.data.iter().zip(&gt.data).zip(grad.data.iter_mut()) {
        let diff = r - g;
        l1 += diff.abs().sum();
        *d = diff.map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }) * ((1.0 - lambda_ssim) / n);
    }
    l1 /= n;
    let mut value = (1.0 - lambda_ssim) * l1;
    if lambda_ssim > 0.0 {
        let (s, gs) = ssim_with_grad(render, gt, true)?;
        value += lambda_ssim * (1.0 - s) / 2.0;
        let gs = gs.expect("requested");
        for (d, g) in grad.data.iter_mut().zip(&gs.data) {
            *d -= g * (lambda_ssim / 2.0);
        }
    }
    Ok((value, grad))
}

/// Mean absolute color error over pixels where `keep` is set; zero when none are.
pub fn masked_l1(render: &ColorImage, gt: &ColorImage, keep: &Mask) -> Result<(f64, ColorImage)> {
    render.same_shape(gt)?;
    check_shape(render.width, render.height, keep.width, keep.height)?;
    let count = keep.count();
    let mut grad = ColorImage::new(render.width, render.height);
    if count == 0 {
        return Ok((0.0, grad));
    }
    let n = (count * 3) as f64;
    let mut value = 0.0;
    for i in 0..render.data.len() {
        if !keep.data[i] {
            continue;
        }
        let diff = render.data[i] - gt.data[i];
        value += diff.abs().sum();
        grad.data[i] = diff.map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }) / n;
    }
    Ok((value / n, grad))
}

/// Mean L1 depth error over pixels with valid provider depth and
/// accumulated alpha above 0.5.
pub fn depth_loss(depth: &Plane, alpha_acc: &Plane, provider: &Plane, valid: &Mask) -> Result<(f64, Plane)> {
    depth.same_shape(provider)?;
    depth.same_shape(alpha_acc)?;
    check_shape(depth.width, depth.height, valid.width, valid.height)?;
    let sel: Vec<usize> = (0..depth.len())
        .filter(|&i| valid.data[i] && alpha_acc.data[i] > 0.5)
        .collect();
    let mut grad = Plane::new(depth.width, depth.height);
    if sel.is_empty() {
        return Ok((0.0, grad));
    }
    let n = sel.len() as f64;
    let mut value = 0.0;
    for &i in &sel {
        let d = depth.data[i] - provider.data[i];
        value += d.abs();
        grad.data[i] = if d > 0.0 { 1.0 / n } else if d < 0.0 { -1.0 / n } else { 0.0 };
    }
    Ok((value / n, grad))
}

/// Straight-through motion loss: the forward pass thresholds the velocity map
/// to `V̂ ∈ {0, 1}`; the backward pass treats the threshold as identity.
pub fn motion_loss(velocity: &Plane, mask: &Mask, v_thr: f64) -> Result<(f64, Plane)> {
    check_shape(velocity.width, velocity.height, mask.width, mask.height)?;
    let n = velocity.len() as f64;
    let mut grad = Plane::new(velocity.width, velocity.height);
    if velocity.is_empty() {
        return Ok((0.0, grad));
    }
    let mut value = 0.0;
    for i in 0..velocity.len() {
        let hat = if velocity.data[i] > v_thr { 1.0 } else { 0.0 };
        let m = if mask.data[i] { 1.0 } else { 0.0 };
        let e = hat - m;
        value += e * e;
        grad.data[i] = 2.0 * e / n;
    }
    Ok((value / n, grad))
}

/// Per-pixel binary velocity map `V > v_thr`.
pub fn threshold_velocity(velocity: &Plane, v_thr: f64) -> Mask {
    Mask::from_threshold(velocity, v_thr)
}
