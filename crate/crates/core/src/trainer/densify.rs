//! Adaptive density control: clone, split and prune.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::lie::quat_to_matrix;
use crate::scene::{DynamicGaussian, GaussianScene};

/// Gaussians kept when pruning would otherwise empty the scene.
pub const MIN_POPULATION: usize = 100;
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

/// Per-Gaussian screen-space gradient statistics since the last densification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_accum: Vec<f64>,
    pub denom: Vec<u32>,
    /// Sum of world-space mean gradients, for the clone direction.
    pub mean_grad: Vec<Vector3<f64>>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_accum: vec![0.0; n],
            denom: vec![0; n],
            mean_grad: vec![Vector3::zeros(); n],
        }
    }

    pub fn record(&mut self, i: usize, screen_grad: f64, mean_grad: Vector3<f64>) {
        self.grad_accum[i] += screen_grad;
        self.denom[i] += 1;
        self.mean_grad[i] += mean_grad;
    }

    pub fn average(&self, i: usize) -> f64 {
        if self.denom[i] == 0 {
            0.0
        } else {
            self.grad_accum[i] / self.denom[i] as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensifyParams {
    /// Average screen-space gradient norm (per pixel of displacement) above
    /// which a Gaussian is densified.
    pub grad_thr: f64,
    /// World-space largest-axis scale separating clone from split.
    pub split_scale_thr: f64,
    pub prune_opacity_thr: f64,
    pub max_gaussians: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// For each Gaussian of the new scene, its index in the old scene, or
    /// `None` when it was created by this call.
    pub sources: Vec<Option<usize>>,
}

/// Clones small high-gradient Gaussians, splits large ones, then prunes
/// near-transparent ones. Velocity, life peak and decay carry over to every
/// child. When pruning would leave nothing, the scene keeps its
/// [`MIN_POPULATION`] most opaque members and `MinimumPopulation` is returned.
pub fn densify_and_prune(scene: &mut GaussianScene, stats: &DensifyStats, p: &DensifyParams) -> Result<DensifyReport> {
    let old = scene.gaussians().to_vec();
    let n = old.len();
    if stats.grad_accum.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: stats.grad_accum.len(),
        });
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| stats.average(i) >= p.grad_thr).collect();
    order.sort_by(|&a, &b| stats.average(b).total_cmp(&stats.average(a)).then(a.cmp(&b)));

    let mut split_set = vec![false; n];
    let mut extra: Vec<DynamicGaussian> = Vec::new();
    let mut budget = p.max_gaussians.saturating_sub(n);
    let mut report = DensifyReport::default();
    for &i in &order {
        if budget == 0 {
            break;
        }
        let g = old[i];
        let scale = g.scale();
        let smax = scale.max();
        if smax <= p.split_scale_thr {
            let dir = stats.mean_grad[i];
            let shift = if dir.norm() > 0.0 { -dir.normalize() * 0.5 * smax } else { Vector3::zeros() };
            extra.push(DynamicGaussian { mu: g.mu + shift, ..g });
            report.cloned += 1;
            budget -= 1;
        } else {
            let axis = scale.imax();
            let r = quat_to_matrix(&g.rot_q);
            let offset = r.column(axis) * scale[axis];
            let log_scale = g.log_scale.add_scalar(-SPLIT_SCALE_DIVISOR.ln());
            extra.push(DynamicGaussian { mu: g.mu + offset, log_scale, ..g });
            extra.push(DynamicGaussian { mu: g.mu - offset, log_scale, ..g });
            split_set[i] = true;
            report.split += 1;
            budget -= 1;
        }
    }

    let mut candidates: Vec<(DynamicGaussian, Option<usize>)> = old
        .iter()
        .enumerate()
        .filter(|(i, _)| !split_set[*i])
        .map(|(i, g)| (*g, Some(i)))
        .collect();
    candidates.extend(extra.into_iter().map(|g| (g, None)));
    let before = candidates.len();
    let kept: Vec<(DynamicGaussian, Option<usize>)> = candidates
        .iter()
        .filter(|(g, _)| g.opacity() >= p.prune_opacity_thr)
        .cloned()
        .collect();
    if kept.is_empty() && before > 0 {
        let mut by_opacity = candidates;
        by_opacity.sort_by(|a, b| b.0.logit_opacity.total_cmp(&a.0.logit_opacity));
        by_opacity.truncate(MIN_POPULATION);
        let kept_n = by_opacity.len();
        *scene.gaussians_mut() = by_opacity.into_iter().map(|(g, _)| g).collect();
        return Err(Error::MinimumPopulation { kept: kept_n });
    }
    report.pruned = before - kept.len();
    report.sources = kept.iter().map(|(_, s)| *s).collect();
    *scene.gaussians_mut() = kept.into_iter().map(|(g, _)| g).collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{logit, SceneConfig};

    fn params() -> DensifyParams {
        DensifyParams {
            grad_thr: 1.0,
            split_scale_thr: 0.5,
            prune_opacity_thr: 0.01,
            max_gaussians: 1000,
        }
    }

    fn scene(n: usize) -> GaussianScene {
        let gs = (0..n)
            .map(|i| DynamicGaussian {
                mu: Vector3::new(i as f64, 0.0, 5.0),
                log_scale: Vector3::repeat(0.1f64.ln()),
                logit_opacity: logit(0.5),
                v: Vector3::new(0.3, 0.0, 0.0),
                tau: 0.25,
                ..Default::default()
            })
            .collect();
        GaussianScene::from_gaussians(SceneConfig::default(), gs)
    }

    #[test]
    fn nothing_above_threshold_only_prunes() {
        let mut s = scene(5);
        s.gaussians_mut()[2].logit_opacity = logit(0.001);
        let stats = DensifyStats::new(5);
        let r = densify_and_prune(&mut s, &stats, &params()).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(r.pruned, 1);
        assert_eq!(r.sources, vec![Some(0), Some(1), Some(3), Some(4)]);
    }

    #[test]
    fn large_high_gradient_gaussian_splits() {
        let mut s = scene(3);
        s.gaussians_mut()[1].log_scale = Vector3::new(2.0f64.ln(), 0.1f64.ln(), 0.1f64.ln());
        let mut stats = DensifyStats::new(3);
        stats.record(1, 5.0, Vector3::x());
        let r = densify_and_prune(&mut s, &stats, &params()).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(r.split, 1);
        let kids = &s.gaussians()[2..];
        for k in kids {
            assert!((k.scale().x - 2.0 / 1.6).abs() < 1e-12);
            assert_eq!(k.v, Vector3::new(0.3, 0.0, 0.0));
            assert_eq!(k.tau, 0.25);
        }
        assert!((kids[0].mu.x - 3.0).abs() < 1e-12 && (kids[1].mu.x + 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_high_gradient_gaussian_clones_against_gradient() {
        let mut s = scene(2);
        let mut stats = DensifyStats::new(2);
        stats.record(0, 2.0, Vector3::new(0.0, 3.0, 0.0));
        let r = densify_and_prune(&mut s, &stats, &params()).unwrap();
        assert_eq!((r.cloned, s.len()), (1, 3));
        assert_eq!(r.sources, vec![Some(0), Some(1), None]);
        assert!((s.gaussians()[2].mu.y + 0.05).abs() < 1e-12);
    }

    #[test]
    fn all_transparent_keeps_top_hundred() {
        let mut s = scene(150);
        for (i, g) in s.gaussians_mut().iter_mut().enumerate() {
            g.logit_opacity = -20.0 + i as f64 * 0.01;
        }
        let stats = DensifyStats::new(150);
        let err = densify_and_prune(&mut s, &stats, &params()).unwrap_err();
        assert!(matches!(err, Error::MinimumPopulation { kept: 100 }));
        assert_eq!(s.len(), 100);
        assert!(s.gaussians().iter().all(|g| g.logit_opacity >= -20.0 + 50.0 * 0.01 - 1e-9));
    }

    #[test]
    fn cap_limits_growth() {
        let mut s = scene(4);
        let mut stats = DensifyStats::new(4);
        for i in 0..4 {
            stats.record(i, 2.0 + i as f64, Vector3::x());
        }
        let p = DensifyParams {
            max_gaussians: 6,
            ..params()
        };
        densify_and_prune(&mut s, &stats, &p).unwrap();
        assert_eq!(s.len(), 6);
    }
}
