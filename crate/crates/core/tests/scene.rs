use dynsplat::odometry::{chain_poses, init_scene_from_frames, oracle_provider, InitParams, NoiseSpec};
use dynsplat::scene::{
    eval_at_time, eval_at_time_backward, split_static_dynamic, velocity_scalar, velocity_scalar_grad, DynamicGaussian,
    GaussianScene, SceneConfig,
};
use dynsplat::synth::{generate, SceneSpec};
use nalgebra::{Vector3, Vector4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_gaussian(rng: &mut ChaCha8Rng) -> DynamicGaussian {
    let mut v3 = |s: f64| Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
    let mu = v3(5.0);
    let log_scale = v3(1.0);
    let v = v3(2.0);
    DynamicGaussian {
        mu,
        log_scale,
        rot_q: Vector4::new(1.0, 0.0, 0.0, 0.0),
        logit_opacity: rng.random_range(-3.0..3.0),
        v,
        tau: rng.random_range(0.0..1.0),
        log_beta: rng.random_range(-2.5..0.5),
        ..Default::default()
    }
}

/// Scalar probe `a·mu_t + b·alpha_t`.
fn probe(g: &DynamicGaussian, t: f64, cfg: &SceneConfig, a: &Vector3<f64>, b: f64) -> f64 {
    let ev = eval_at_time(g, t, cfg);
    a.dot(&ev.mu_t) + b * ev.alpha_t
}

#[test]
fn temporal_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let cfg = SceneConfig {
            cycle_length: rng.random_range(0.1..2.0),
            ..Default::default()
        };
        let g = random_gaussian(&mut rng);
        let t = rng.random_range(-0.2..1.2);
        let a = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let b = rng.random_range(-1.0..1.0);
        let ev = eval_at_time(&g, t, &cfg);
        let grad = eval_at_time_backward(&g, &ev, &a, b);
        let fd = |edit: &dyn Fn(&mut DynamicGaussian, f64)| {
            let mut p = g.clone();
            let mut m = g.clone();
            edit(&mut p, h);
            edit(&mut m, -h);
            (probe(&p, t, &cfg, &a, b) - probe(&m, t, &cfg, &a, b)) / (2.0 * h)
        };
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for k in 0..3 {
            analytic.push(grad.mu[k]);
            numeric.push(fd(&|g, e| g.mu[k] += e));
            analytic.push(grad.v[k]);
            numeric.push(fd(&|g, e| g.v[k] += e));
        }
        analytic.push(grad.tau);
        numeric.push(fd(&|g, e| g.tau += e));
        analytic.push(grad.log_beta);
        numeric.push(fd(&|g, e| g.log_beta += e));
        analytic.push(grad.logit_opacity);
        numeric.push(fd(&|g, e| g.logit_opacity += e));
        for (an, nu) in analytic.iter().zip(&numeric) {
            let rel = (an - nu).abs() / an.abs().max(nu.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-6, "worst relative error {worst}");
}

#[test]
fn velocity_scalar_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = SceneConfig::default();
    let h = 1e-6;
    for _ in 0..100 {
        let g = random_gaussian(&mut rng);
        let an = velocity_scalar_grad(&g, &cfg);
        for k in 0..3 {
            let mut p = g.clone();
            let mut m = g.clone();
            p.v[k] += h;
            m.v[k] -= h;
            let nu = (velocity_scalar(&p, &cfg) - velocity_scalar(&m, &cfg)) / (2.0 * h);
            assert!((an[k] - nu).abs() <= 1e-6 * an[k].abs().max(1e-3), "{} vs {nu}", an[k]);
        }
    }
}

#[test]
fn velocity_scalar_saturates() {
    let cfg = SceneConfig::default();
    let mut g = DynamicGaussian::default();
    let mut last = 0.0;
    for speed in [0.0, 0.1, 0.5, 2.0, 10.0, 100.0] {
        g.v = Vector3::new(0.0, speed, 0.0);
        let s = velocity_scalar(&g, &cfg);
        assert!(s >= last && s < 1.0 || speed > 10.0);
        last = s;
    }
    assert!((last - 1.0).abs() < 1e-12);
    g.v = Vector3::new(0.3, 0.0, 0.4);
    assert!((velocity_scalar(&g, &cfg) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
}

/// Initial scene of a generated street, with random velocities on top.
fn generated_scene(seed: u64) -> GaussianScene {
    let mut spec = SceneSpec::preset("multi-mover").unwrap();
    spec.frame_count = 3;
    spec.camera.width = 32;
    spec.camera.height = 24;
    spec.camera.focal = 26.0;
    let ds = generate(&spec, seed).unwrap();
    let frames = oracle_provider(&ds, &NoiseSpec::default()).unwrap();
    let traj = chain_poses(&frames);
    let mut scene =
        init_scene_from_frames(&frames, &traj, &ds.intrinsics, &InitParams::default(), SceneConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for g in scene.gaussians_mut() {
        if rng.random_bool(0.4) {
            g.v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
    }
    scene
}

#[test]
fn partition_matches_a_brute_force_scan() {
    for seed in 0..3 {
        let scene = generated_scene(seed);
        assert!(!scene.is_empty());
        let (st, dy) = split_static_dynamic(&scene);
        let thr = scene.config.v_thr;
        let mut expect_st = Vec::new();
        let mut expect_dy = Vec::new();
        for (i, g) in scene.gaussians().iter().enumerate() {
            let s = 1.0 - (-g.v.norm() / scene.config.v_scale).exp();
            if s > thr {
                expect_dy.push(i);
            } else {
                expect_st.push(i);
            }
        }
        assert_eq!(st, expect_st);
        assert_eq!(dy, expect_dy);
        assert!(!dy.is_empty() && !st.is_empty());
    }
}

#[test]
fn freshly_initialized_scene_is_all_static() {
    let mut scene = generated_scene(4);
    for g in scene.gaussians_mut() {
        g.v = Vector3::zeros();
    }
    let (st, dy) = split_static_dynamic(&scene);
    assert_eq!(st.len(), scene.len());
    assert!(dy.is_empty());
}

proptest! {
    #[test]
    fn peak_time_returns_the_base_state(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_gaussian(&mut rng);
        let ev = eval_at_time(&g, g.tau, &SceneConfig::default());
        prop_assert_eq!(ev.mu_t, g.mu);
        prop_assert_eq!(ev.alpha_t, g.opacity());
    }

    #[test]
    fn mean_repeats_every_cycle(seed in any::<u64>(), t in -1.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_gaussian(&mut rng);
        let cfg = SceneConfig::default();
        let a = eval_at_time(&g, t, &cfg).mu_t;
        let b = eval_at_time(&g, t + cfg.cycle_length, &cfg).mu_t;
        prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
    }
}
