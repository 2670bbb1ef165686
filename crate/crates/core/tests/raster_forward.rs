mod common;

use dynsplat::camera::{CameraIntrinsics, CameraPose, PoseDelta, View};
use dynsplat::raster::{project, rasterize, render, render_static_only, RasterConfig};
use dynsplat::scene::{split_static_dynamic, DynamicGaussian, GaussianScene, SceneConfig};
use dynsplat::sh::rgb_to_dc;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn no_termination() -> RasterConfig {
    RasterConfig {
        min_transmittance: 0.0,
        ..RasterConfig::default()
    }
}

fn scene_for(seed: u64, n: usize) -> (GaussianScene, CameraPose, CameraIntrinsics, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = common::random_pose(&mut rng, 0.5);
    let scene = common::random_scene(&mut rng, n, &pose, 0.45, SceneConfig::default());
    (scene, pose, CameraIntrinsics::centered(64, 64, 90.0), rng.random_range(0.3..0.7))
}

#[test]
fn tiled_matches_dense_oracle() {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let (scene, pose, k, t) = scene_for(seed, 20 + (seed as usize * 7) % 81);
        for cfg in [no_termination(), RasterConfig::smooth()] {
            let view = View::new(&pose, &PoseDelta::zero());
            let projected = project(&scene, &view, &k, t, &cfg);
            let out = rasterize(projected.clone(), &k, &cfg);
            let (c, d, v, a) = common::dense_oracle(&projected, 64, 64, &cfg);
            for i in 0..64 * 64 {
                let e = (out.color.data[i] - c.data[i]).amax()
                    .max((out.depth.data[i] - d.data[i]).abs())
                    .max((out.velocity.data[i] - v.data[i]).abs())
                    .max((out.alpha_acc.data[i] - a.data[i]).abs());
                worst = worst.max(e);
            }
        }
    }
    assert!(worst < 1e-5, "max abs deviation {worst:e}");
}

#[test]
fn empty_list_renders_zeros() {
    let k = CameraIntrinsics::centered(20, 10, 30.0);
    let out = rasterize(Vec::new(), &k, &RasterConfig::default());
    assert!(out.color.data.iter().all(|c| *c == Vector3::zeros()));
    assert!(out.depth.data.iter().chain(&out.velocity.data).chain(&out.alpha_acc.data).all(|&x| x == 0.0));
}

#[test]
fn single_opaque_gaussian_at_pixel_center() {
    let k = CameraIntrinsics {
        cx: 16.0,
        cy: 16.0,
        ..CameraIntrinsics::centered(32, 32, 50.0)
    };
    let rgb = Vector3::new(0.2, 0.7, 0.4);
    let mut g = DynamicGaussian {
        mu: Vector3::new(0.0, 0.0, 4.0),
        log_scale: Vector3::repeat(0.0),
        logit_opacity: 40.0,
        tau: 0.5,
        ..Default::default()
    };
    g.sh[0] = rgb_to_dc(&rgb);
    let scene = GaussianScene::from_gaussians(SceneConfig::default(), vec![g]);
    let out = render(&scene, &CameraPose::identity(0.5), &PoseDelta::zero(), &k, 0.5, &RasterConfig::default());
    assert!((out.color.get(16, 16) - rgb).amax() < 1e-6);
    assert!((out.alpha_acc.get(16, 16) - 1.0).abs() < 1e-6);
    assert!((out.depth.get(16, 16) - 4.0).abs() < 1e-9);
}

#[test]
fn projection_examples() {
    let k = CameraIntrinsics::centered(64, 48, 80.0);
    let s = 0.05f64;
    let z = 4.0;
    let on_axis = DynamicGaussian {
        mu: Vector3::new(0.0, 0.0, z),
        log_scale: Vector3::repeat(s.ln()),
        ..Default::default()
    };
    let behind = DynamicGaussian {
        mu: Vector3::new(0.0, 0.0, -2.0),
        ..on_axis
    };
    let scene = GaussianScene::from_gaussians(SceneConfig::default(), vec![on_axis, behind]);
    let view = View::new(&CameraPose::identity(0.0), &PoseDelta::zero());
    let p = project(&scene, &view, &k, 0.0, &RasterConfig::default());
    assert_eq!(p.len(), 1);
    assert_eq!(p[0].source_id, 0);
    assert!((p[0].mu2d.x - k.cx).abs() < 1e-12 && (p[0].mu2d.y - k.cy).abs() < 1e-12);
    let expect = (80.0 * s / z).powi(2) + 0.3;
    assert!((p[0].cov2d[(0, 0)] - expect).abs() < 1e-12);
    assert!((p[0].cov2d[(1, 1)] - expect).abs() < 1e-12);
    assert!(p[0].cov2d[(0, 1)].abs() < 1e-15);
}

#[test]
fn static_only_matches_filtered_copy() {
    let (scene, pose, k, t) = scene_for(4, 40);
    let mut gs = scene.gaussians().to_vec();
    for (i, g) in gs.iter_mut().enumerate() {
        g.v = if i % 3 == 0 { Vector3::new(2.0, 0.0, 0.0) } else { Vector3::new(0.01, 0.0, 0.0) };
    }
    let scene = GaussianScene::from_gaussians(scene.config.clone(), gs);
    let (stat, dynamic) = split_static_dynamic(&scene);
    assert!(!dynamic.is_empty());
    let cfg = RasterConfig::default();
    let a = render_static_only(&scene, &pose, &PoseDelta::zero(), &k, t, &cfg);
    let b = render(&scene.subset(&stat), &pose, &PoseDelta::zero(), &k, t, &cfg);
    assert_eq!(a.color, b.color);
    assert_eq!(a.depth, b.depth);

    let still = GaussianScene::from_gaussians(
        scene.config.clone(),
        scene.gaussians().iter().map(|g| DynamicGaussian { v: Vector3::zeros(), ..*g }).collect(),
    );
    let full = render(&still, &pose, &PoseDelta::zero(), &k, t, &cfg);
    let so = render_static_only(&still, &pose, &PoseDelta::zero(), &k, t, &cfg);
    assert_eq!(full.color, so.color);
}

#[test]
fn dynamic_gaussian_excluded_from_static_render() {
    let k = CameraIntrinsics::centered(32, 32, 50.0);
    let mut wall = DynamicGaussian {
        mu: Vector3::new(0.0, 0.0, 6.0),
        log_scale: Vector3::repeat(0.5),
        logit_opacity: 8.0,
        ..Default::default()
    };
    wall.sh[0] = rgb_to_dc(&Vector3::new(0.1, 0.1, 0.9));
    let mut car = DynamicGaussian {
        mu: Vector3::new(0.0, 0.0, 3.0),
        log_scale: Vector3::repeat(-1.0),
        logit_opacity: 8.0,
        v: Vector3::new(3.0, 0.0, 0.0),
        ..Default::default()
    };
    car.sh[0] = rgb_to_dc(&Vector3::new(0.9, 0.1, 0.1));
    let scene = GaussianScene::from_gaussians(SceneConfig::default(), vec![wall, car]);
    let pose = CameraPose::identity(0.0);
    let cfg = RasterConfig::default();
    let full = render(&scene, &pose, &PoseDelta::zero(), &k, 0.0, &cfg);
    let stat = render_static_only(&scene, &pose, &PoseDelta::zero(), &k, 0.0, &cfg);
    let c = (16, 16);
    assert!(full.color.get(c.0, c.1).x > 0.8);
    assert!(stat.color.get(c.0, c.1).x < 0.2 && stat.color.get(c.0, c.1).z > 0.8);
    assert!(full.velocity.get(c.0, c.1) > 0.9);
}

#[test]
fn deterministic_across_thread_modes() {
    let (scene, pose, k, t) = scene_for(9, 80);
    let par = render(&scene, &pose, &PoseDelta::zero(), &k, t, &RasterConfig::default());
    let seq_cfg = RasterConfig {
        single_threaded: true,
        ..RasterConfig::default()
    };
    let seq = render(&scene, &pose, &PoseDelta::zero(), &k, t, &seq_cfg);
    assert_eq!(par.color, seq.color);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let loss = common::LinearLoss::random(&mut rng, 64, 64, true, true, true);
    let ga = dynsplat::raster::rasterize_backward(&par, &scene, &loss.grads).unwrap();
    let gb = dynsplat::raster::rasterize_backward(&seq, &scene, &loss.grads).unwrap();
    assert_eq!(ga, gb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn input_order_does_not_matter(seed in 0u64..10_000, rot in 1usize..30) {
        let (scene, pose, k, t) = scene_for(seed, 30);
        let view = View::new(&pose, &PoseDelta::zero());
        let cfg = RasterConfig::default();
        let mut p = project(&scene, &view, &k, t, &cfg);
        let a = rasterize(p.clone(), &k, &cfg);
        let len = p.len().max(1);
        p.rotate_left(rot % len);
        p.reverse();
        let b = rasterize(p, &k, &cfg);
        prop_assert_eq!(a.color, b.color);
        prop_assert_eq!(a.depth, b.depth);
    }

    #[test]
    fn buffers_stay_in_range(seed in 0u64..10_000) {
        let (scene, pose, k, t) = scene_for(seed, 60);
        let out = render(&scene, &pose, &PoseDelta::zero(), &k, t, &RasterConfig::default());
        for i in 0..out.alpha_acc.len() {
            let a = out.alpha_acc.data[i];
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
            let v = out.velocity.data[i];
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            prop_assert!(out.color.data[i].iter().all(|c| (0.0..=1.0 + 1e-12).contains(c)));
        }
    }
}

#[test]
fn transmittance_never_increases() {
    // accumulated alpha along a blend equals 1 - T, so adding splats in front
    // can only raise it
    let (scene, pose, k, t) = scene_for(21, 30);
    let view = View::new(&pose, &PoseDelta::zero());
    let cfg = no_termination();
    let mut p = project(&scene, &view, &k, t, &cfg);
    p.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    let mut prev = vec![0.0; 64 * 64];
    for n in 1..=p.len() {
        let out = rasterize(p[..n].to_vec(), &k, &cfg);
        for (i, &a) in out.alpha_acc.data.iter().enumerate() {
            assert!(a + 1e-12 >= prev[i]);
            assert!(a <= 1.0);
            prev[i] = a;
        }
    }
}
