mod common;

use dynsplat::buffer::{Mask, Plane};
use dynsplat::camera::{CameraIntrinsics, PoseDelta};
use dynsplat::odometry::{oracle_provider, NoiseSpec};
use dynsplat::pipeline::prepare;
use dynsplat::raster::{apply_frozen_rule, rasterize_backward, rasterize_backward_tagged, render, RasterConfig, RenderGrads};
use dynsplat::scene::{ParamGroup, SceneConfig, PARAM_LEN};
use dynsplat::synth::{generate, SceneSpec};
use dynsplat::trainer::{checkpoint, depth_loss, motion_loss, metrics_csv, TrainConfig, TrainInput, Trainer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Split {
    out: dynsplat::raster::RenderOutput,
    scene: dynsplat::scene::GaussianScene,
    main: RenderGrads,
    motion: RenderGrads,
}

fn split_case(seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = common::random_pose(&mut rng, 0.5);
    let mut scene = common::random_scene(&mut rng, 8, &pose, 0.3, SceneConfig::default());
    // move the means off the life peak so every pathway is active
    for g in scene.gaussians_mut() {
        g.tau = 0.3;
    }
    let k = CameraIntrinsics::centered(32, 32, 60.0);
    let out = render(&scene, &pose, &PoseDelta::zero(), &k, 0.45, &RasterConfig::smooth());
    let a = common::LinearLoss::random(&mut rng, 32, 32, true, true, false);
    let b = common::LinearLoss::random(&mut rng, 32, 32, false, false, true);
    Split {
        out,
        scene,
        main: a.grads,
        motion: b.grads,
    }
}

fn combined(s: &Split) -> RenderGrads {
    RenderGrads {
        color: s.main.color.clone(),
        depth: s.main.depth.clone(),
        velocity: s.motion.velocity.clone(),
    }
}

#[test]
fn frozen_rule_matches_a_two_pass_decomposition() {
    let v = ParamGroup::Velocity.range();
    for seed in 0..6 {
        let s = split_case(seed);
        let photo = rasterize_backward(&s.out, &s.scene, &s.main).unwrap();
        let motion = rasterize_backward(&s.out, &s.scene, &s.motion).unwrap();
        let frozen = apply_frozen_rule(&rasterize_backward_tagged(&s.out, &s.scene, &combined(&s)).unwrap());
        let mut moved = false;
        for i in 0..s.scene.len() {
            for j in 0..PARAM_LEN {
                let expect = photo.gaussians[i][j] + if v.contains(&j) { motion.gaussians[i][j] } else { 0.0 };
                let got = frozen.gaussians[i][j];
                assert!((got - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "g{i} slot {j}: {got} vs {expect}");
                moved |= !v.contains(&j) && motion.gaussians[i][j] != 0.0;
            }
        }
        // the motion term does reach non-velocity parameters before the rule
        assert!(moved);

        // motion-only: everything but velocity is exactly zero
        let only = apply_frozen_rule(&rasterize_backward_tagged(&s.out, &s.scene, &s.motion).unwrap());
        for g in &only.gaussians {
            for (j, x) in g.iter().enumerate() {
                if !v.contains(&j) {
                    assert_eq!(*x, 0.0);
                }
            }
        }
        // photometric-only: untouched
        let tagged = rasterize_backward_tagged(&s.out, &s.scene, &s.main).unwrap();
        assert_eq!(apply_frozen_rule(&tagged).gaussians, photo.gaussians);
    }
}

#[test]
fn loss_terms_add_up_before_the_rule() {
    let s = split_case(11);
    let total = rasterize_backward(&s.out, &s.scene, &combined(&s)).unwrap();
    let a = rasterize_backward(&s.out, &s.scene, &s.main).unwrap();
    let b = rasterize_backward(&s.out, &s.scene, &s.motion).unwrap();
    for i in 0..s.scene.len() {
        for j in 0..PARAM_LEN {
            let sum = a.gaussians[i][j] + b.gaussians[i][j];
            assert!((total.gaussians[i][j] - sum).abs() <= 1e-10 * (1.0 + sum.abs()));
        }
    }
    for j in 0..6 {
        assert!((total.pose[j] - a.pose[j] - b.pose[j]).abs() <= 1e-10 * (1.0 + total.pose[j].abs()));
    }
}

proptest! {
    #[test]
    fn motion_loss_is_straight_through(seed in any::<u64>(), thr in 0.05..0.95f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
        let v = Plane::from_fn(w, h, |_, _| rng.random::<f64>());
        let m = Mask { width: w, height: h, data: (0..w * h).map(|_| rng.random_bool(0.3)).collect() };
        let (loss, g) = motion_loss(&v, &m, thr).unwrap();
        let n = (w * h) as f64;
        let mut expect = 0.0;
        for i in 0..w * h {
            let hat = if v.data[i] > thr { 1.0 } else { 0.0 };
            let e = hat - if m.data[i] { 1.0 } else { 0.0 };
            expect += e * e;
            prop_assert_eq!(g.data[i], 2.0 * e / n);
        }
        prop_assert_eq!(loss, expect / n);
        // binary forward: nudging V without crossing the threshold changes nothing
        let nudged = Plane::from_fn(w, h, |x, y| {
            let val = v.get(x, y);
            if (val - thr).abs() > 1e-3 { val + 0.5e-3 * (val - thr).signum() } else { val }
        });
        prop_assert_eq!(motion_loss(&nudged, &m, thr).unwrap().0, loss);
    }

    #[test]
    fn depth_loss_matches_a_masked_mean(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (9, 7);
        let d = Plane::from_fn(w, h, |_, _| rng.random_range(0.5..10.0));
        let a = Plane::from_fn(w, h, |_, _| rng.random::<f64>());
        let p = Plane::from_fn(w, h, |_, _| rng.random_range(0.5..10.0));
        let valid = Mask { width: w, height: h, data: (0..w * h).map(|_| rng.random_bool(0.7)).collect() };
        let (loss, g) = depth_loss(&d, &a, &p, &valid).unwrap();
        let used: Vec<usize> = (0..w * h).filter(|&i| valid.data[i] && a.data[i] > 0.5).collect();
        let expect = if used.is_empty() {
            0.0
        } else {
            used.iter().map(|&i| (d.data[i] - p.data[i]).abs()).sum::<f64>() / used.len() as f64
        };
        prop_assert!((loss - expect).abs() < 1e-12);
        for i in 0..w * h {
            if !used.contains(&i) {
                prop_assert_eq!(g.data[i], 0.0);
            }
        }
    }
}

const SMALL: &str = r#"
seed = 7
single_threaded = true
[schedule]
total_iters = 30
pose_refine_start = 0.5
densify_start = 6
densify_interval = 6
densify_stop = 20
log_interval = 5
[lr]
pose = 0.01
"#;

fn small_input(noise: bool) -> TrainInput {
    let mut spec = SceneSpec::preset("one-mover").unwrap();
    spec.frame_count = 6;
    spec.camera.width = 32;
    spec.camera.height = 32;
    spec.camera.focal = 28.0;
    let ds = generate(&spec, 0).unwrap();
    let frames = oracle_provider(&ds, &NoiseSpec::default()).unwrap();
    let noise = if noise {
        NoiseSpec {
            rot_deg: 0.5,
            trans_frac: 0.05,
            seed: 3,
            ..Default::default()
        }
    } else {
        NoiseSpec::default()
    };
    prepare(&frames, &ds.intrinsics, &noise, false).unwrap().input
}

#[test]
fn poses_stay_fixed_until_refinement_starts() {
    let cfg = TrainConfig::from_toml(SMALL).unwrap();
    let start = cfg.schedule.pose_start_iter();
    assert_eq!(start, 15);
    let mut tr = Trainer::new(small_input(true), cfg).unwrap();
    let frames = tr.input.frames.len();
    while tr.iteration() < start {
        assert!(!tr.in_pose_phase());
        tr.step().unwrap();
        for f in 0..frames {
            assert!(tr.delta(f).to_array().iter().all(|x| x.to_bits() == 0));
        }
    }
    assert!(tr.in_pose_phase());
    tr.run(30).unwrap();
    assert!((0..frames).any(|f| !tr.delta(f).is_zero()));
    let out = tr.finish().unwrap();
    assert_eq!(out.refined.len(), frames);
    assert_eq!(out.metrics.len(), 6);
}

#[test]
fn same_seed_same_log() {
    let run = |seed: u64| {
        let mut cfg = TrainConfig::from_toml(SMALL).unwrap();
        cfg.seed = seed;
        let mut tr = Trainer::new(small_input(false), cfg).unwrap();
        tr.run(30).unwrap();
        metrics_csv(tr.metrics())
    };
    let a = run(7);
    assert_eq!(a, run(7));
    assert_ne!(a, run(8));
}

#[test]
fn checkpoint_resumes_bit_exactly() {
    let cfg = TrainConfig::from_toml(SMALL).unwrap();
    let mut straight = Trainer::new(small_input(true), cfg.clone()).unwrap();
    straight.run(30).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(small_input(true), cfg).unwrap();
    first.run(18).unwrap();
    checkpoint::save(tmp.path(), &first).unwrap();
    let mut resumed = checkpoint::load(tmp.path(), small_input(true)).unwrap();
    assert_eq!(resumed.iteration(), 18);
    resumed.run(30).unwrap();

    assert_eq!(metrics_csv(resumed.metrics()), metrics_csv(straight.metrics()));
    assert_eq!(resumed.scene.gaussians(), straight.scene.gaussians());
    for f in 0..straight.input.frames.len() {
        assert_eq!(resumed.delta(f), straight.delta(f));
    }

    // a truncated optimizer blob is a format error, not a panic
    let blob = tmp.path().join(checkpoint::OPTIMIZER_FILE);
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() / 2]).unwrap();
    assert!(checkpoint::load(tmp.path(), small_input(true)).is_err());
}
