use motrans::io::RunConfig;
use motrans::kinematics::{BoneFrame, BoneSequence, Rigid};
use motrans::mpm::ParticleState;
use motrans::pipeline::{prepare, Inputs, Prepared};
use motrans::synth::{synth_scene, SceneKind, SynthParams};
use motrans::transfer::{
    ablation_manual_velocity, coverage_ratio, displacement_loss, run_transfer, train_phase, TransferScene,
};
use motrans::{Mat3, Vec3};
use nalgebra::Translation3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inputs(kind: SceneKind, p: &SynthParams) -> Inputs {
    let s = synth_scene(kind, p).unwrap();
    Inputs { particles: s.particles, target: s.target, reference: s.reference, sequence: s.sequence }
}

fn small_box(delta: Vec3, frames: usize, iters: usize) -> Prepared {
    let p = SynthParams { n: 5, frames, box_delta: delta, ..Default::default() };
    let mut cfg = RunConfig::default();
    cfg.optimizer.iters = iters;
    cfg.optimizer.field_resolution = 8;
    cfg.optimizer.field_channels = 4;
    cfg.optimizer.field_hidden = 8;
    prepare(&inputs(SceneKind::Box, &p), &cfg).unwrap()
}

#[test]
fn zero_reference_delta_is_a_no_op_phase() {
    let mut p = small_box(Vec3::zeros(), 2, 3);
    let start = p.scene.particles.clone();
    // the displacement term is zero; the total only carries the TV of the
    // randomly initialized planes
    let tv: f64 = p.scene.fields.iter().flatten().map(|f| f.tv_loss().0).sum();
    let r = train_phase(&mut p.scene, &start, 0).unwrap();
    assert_eq!(r.best_loss, 0.0);
    assert_eq!(r.best_iter, 0);
    assert_eq!(r.loss_history[0], p.scene.options.tv_weight * tv);
    assert_eq!(r.state.x, start.x);
    assert_eq!(r.state.len(), start.len());
}

#[test]
fn zero_motion_reference_gives_identical_frames() {
    let mut p = small_box(Vec3::zeros(), 3, 2);
    let run = run_transfer(&mut p.scene, 2).unwrap();
    assert_eq!(run.frames.len(), 3);
    for f in &run.frames {
        assert_eq!(f.x, run.frames[0].x);
    }
}

#[test]
fn fresh_fields_give_the_bone_velocity_exactly() {
    let p = small_box(Vec3::new(0.1, -0.02, 0.03), 2, 1);
    let s = &p.scene;
    let v = s.initial_velocities(&s.particles, 0).unwrap();
    // N substeps of dt cover one frame interval
    let expected = Vec3::new(0.1, -0.02, 0.03) / (s.config.substeps as f64 * s.config.dt);
    for vp in &v {
        assert!((vp - expected).norm() <= 1e-12 * expected.norm(), "{vp:?} vs {expected:?}");
    }
    assert_eq!(v, s.base_velocities(0, 1.0).unwrap());
}

#[test]
fn identity_global_exports_the_simulated_states() {
    let mut p = small_box(Vec3::new(0.05, 0.0, 0.0), 3, 2);
    let run = run_transfer(&mut p.scene, 2).unwrap();
    assert_eq!(run.simulated.len(), 3);
    for (f, s) in run.frames.iter().zip(&run.simulated) {
        assert_eq!(f.x, s.x);
        assert_eq!(f.len(), p.scene.particles.len());
    }
}

#[test]
fn pure_global_translation_is_followed_rigidly_and_scaled() {
    let mut p = small_box(Vec3::zeros(), 4, 2);
    let step = Vec3::new(0.1, 0.0, -0.05);
    let bones = p.scene.reference.canonical_bones.clone();
    let frames = (0..4)
        .map(|k| BoneFrame { global: Rigid::from_parts(Translation3::from(step * k as f64), Default::default()), ..BoneFrame::identity(1) })
        .collect();
    p.scene.reference = BoneSequence::new(bones, frames, p.scene.reference.frame_dt).unwrap();
    p.scene.s_t = 2.0 * p.scene.s_o;
    let run = run_transfer(&mut p.scene, 3).unwrap();
    let x0 = &p.scene.particles.x;
    for (k, f) in run.frames.iter().enumerate() {
        let shift = step * (2.0 * k as f64);
        for (a, b) in f.x.iter().zip(x0) {
            assert!((a - b - shift).norm() <= 1e-12, "frame {k}");
        }
        for fp in &run.simulated[k].f {
            assert!((fp - Mat3::identity()).norm() <= 1e-12);
        }
    }
}

#[test]
fn alpha_zero_is_static_and_alpha_one_matches_plain_initialization() {
    let p = small_box(Vec3::new(0.05, 0.0, 0.0), 2, 1);
    let s = &p.scene;
    let still = ablation_manual_velocity(s, &s.particles, 0, 0.0).unwrap();
    assert_eq!(still.state.x, s.particles.x);
    let plain = ablation_manual_velocity(s, &s.particles, 0, 1.0).unwrap();
    assert!(plain.displacement[0].x > 0.0);
}

#[test]
fn scale_compensation_scales_the_target_by_c() {
    let c = 2.5;
    let base = small_box(Vec3::new(0.07, 0.01, 0.0), 2, 1).scene;
    let scaled_particles = ParticleState::uniform(
        base.particles.x.iter().map(|x| x * c).collect(),
        1000.0,
        base.particles.volume[0] * c * c * c,
    )
    .unwrap();
    let s_t = coverage_ratio(&scaled_particles.x).unwrap();
    assert!((s_t - c * base.s_t).abs() <= 1e-12 * s_t);
    let scaled = TransferScene::new(
        scaled_particles,
        base.labels.clone(),
        base.reference.clone(),
        s_t,
        base.s_o,
        base.config.clone(),
        base.options.clone(),
    )
    .unwrap();
    let (_, t0) = base.phase_targets(0).unwrap();
    let (_, t1) = scaled.phase_targets(0).unwrap();
    for (a, b) in t0.iter().zip(&t1) {
        assert!((b - a * c).norm() <= 1e-12 * b.norm());
    }
    // the loss vanishes exactly at the scaled target
    assert_eq!(displacement_loss(&t1, &base.phase_targets(0).unwrap().0, s_t, base.s_o).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_the_target(seed in any::<u64>(), parts in 1usize..5, hit in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s_t, s_o) = (rng.random_range(0.1..5.0), rng.random_range(0.1..5.0));
        let reference: Vec<Vec3> = (0..parts).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let mut achieved: Vec<Vec3> = reference.iter().map(|r| r * (s_t / s_o)).collect();
        if !hit {
            let b = rng.random_range(0..parts);
            achieved[b].y += rng.random_range(0.01..1.0);
        }
        let l = displacement_loss(&achieved, &reference, s_t, s_o).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l <= 1e-12, hit);
    }
}
