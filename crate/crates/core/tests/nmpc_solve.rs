use phasewalk_core::gait::{
    build_schedule, plan_footsteps, CartState, GaitSchedule, PhaseTime, PhaseType, PreviewConfig,
    PreviewGenerator, WalkCommand,
};
use phasewalk_core::nmpc::{
    ablation_config, dynamics_residual, solve, Method, NmpcConfig, NmpcSolution,
    PhasePreviewContext,
};
use phasewalk_core::{LipmParams, Vec2};

fn setup(step_length: f64, phase: usize, elapsed: f64) -> (GaitSchedule, PhasePreviewContext) {
    let plan = plan_footsteps(&WalkCommand {
        step_length,
        n_steps: 10,
        ..Default::default()
    })
    .unwrap();
    let mut s = build_schedule(&plan, 0.6, 0.3).unwrap();
    s.current_index = phase;
    let params = LipmParams::default();
    let gen = PreviewGenerator::new(params, PreviewConfig::default()).unwrap();
    let tau = elapsed.min(s.current().nominal_duration);
    let refs = gen.generate(
        &s,
        PhaseTime { index: phase, tau },
        &CartState::default(),
    );
    let ctx = PhasePreviewContext::build(&s, &refs, elapsed, 3, params.time_constant()).unwrap();
    (s, ctx)
}

fn check_structure(sol: &NmpcSolution, ctx: &PhasePreviewContext) {
    for w in sol.blocks.windows(2) {
        assert!((w[0].zmp_end_ctrl - w[1].zmp_start_ctrl).norm() <= 1e-12);
    }
    for (b, p) in sol.blocks.iter().zip(&ctx.phases) {
        if p.phase_type == PhaseType::Dsp {
            assert!(b.step_ctrl.norm() <= 1e-9);
        }
    }
}

#[test]
fn zero_error_gives_zero_solution_in_one_iteration() {
    let (_, ctx) = setup(0.0, 0, 0.2);
    let cfg = NmpcConfig::default();
    let sol = solve(Vec2::ZERO, &ctx, &cfg, None).unwrap();
    assert!(sol.converged);
    assert_eq!(sol.iterations, 1);
    for b in &sol.blocks {
        assert!(b.to_array().iter().all(|v| v.abs() <= 1e-12));
    }
}

#[test]
fn small_forward_error_uses_zmp_and_step() {
    let (_, ctx) = setup(0.0, 0, 0.1);
    let cfg = NmpcConfig::default();
    let sol = solve(Vec2::new(0.03, 0.0), &ctx, &cfg, None).unwrap();
    assert!(sol.converged, "{sol:?}");
    assert!(sol.constraint_residual <= 1e-6);
    check_structure(&sol, &ctx);
    let b = &sol.blocks[0];
    assert!(b.zmp_start_ctrl.x > 0.0 && b.zmp_end_ctrl.x > 0.0);
    assert!(b.zmp_end_ctrl.x < cfg.zmp_ctrl_upper.x);
    assert!(b.step_ctrl.x > 0.0);
    assert!(b.duration_delta.abs() < 1e-3);
}

#[test]
fn large_forward_error_saturates_zmp_and_shortens_swing() {
    let (_, ctx) = setup(0.0, 0, 0.1);
    let cfg = NmpcConfig::default();
    let sol = solve(Vec2::new(0.2, 0.0), &ctx, &cfg, None).unwrap();
    assert!(sol.converged, "{sol:?}");
    check_structure(&sol, &ctx);
    let b = &sol.blocks[0];
    assert!((b.zmp_end_ctrl.x - cfg.zmp_ctrl_upper.x).abs() <= 1e-9, "{b:?}");
    assert!(b.duration_delta < -0.05);
    assert!(b.step_ctrl.x > 0.1);
}

#[test]
fn solutions_respect_structure_across_phases() {
    let cfg = NmpcConfig::default();
    for phase in 0..4 {
        for elapsed in [0.0, 0.15, 0.28] {
            let (_, ctx) = setup(0.3, phase, elapsed);
            for err in [Vec2::new(0.03, 0.0), Vec2::new(-0.02, 0.04), Vec2::new(0.0, -0.05)] {
                let sol = solve(err, &ctx, &cfg, None).unwrap();
                assert!(sol.converged);
                check_structure(&sol, &ctx);
                let d = dynamics_residual(err, &ctx, &sol.blocks).unwrap();
                assert!(d <= 1e-6);
                let p = &ctx.phases[0];
                let t_new = p.nominal_duration + sol.blocks[0].duration_delta;
                assert!(t_new >= elapsed + cfg.min_remaining - 1e-12);
            }
        }
    }
}

#[test]
fn stronger_offset_weight_never_grows_offset() {
    let (_, ctx) = setup(0.0, 0, 0.3);
    let base = NmpcConfig::default();
    let mut heavy = base;
    heavy.weights.dcm_offset = Vec2::new(5000.0, 5000.0);
    for err in [Vec2::new(0.08, 0.0), Vec2::new(0.0, 0.1), Vec2::new(-0.06, 0.03)] {
        let a = solve(err, &ctx, &base, None).unwrap();
        let b = solve(err, &ctx, &heavy, None).unwrap();
        let na: f64 = a.blocks.iter().map(|k| k.dcm_offset_err.norm().powi(2)).sum();
        let nb: f64 = b.blocks.iter().map(|k| k.dcm_offset_err.norm().powi(2)).sum();
        assert!(nb <= na + 1e-12, "{nb} > {na}");
    }
}

#[test]
fn zmp_only_method_keeps_steps_and_timing() {
    let (_, ctx) = setup(0.0, 0, 0.2);
    let cfg = ablation_config(Method::M4, &NmpcConfig::default());
    let sol = solve(Vec2::new(0.1, 0.05), &ctx, &cfg, None).unwrap();
    for b in &sol.blocks {
        assert!(b.step_ctrl.norm() <= 1e-12, "{sol:#?}");
        assert!(b.duration_delta.abs() <= 1e-12);
    }
}

#[test]
fn warm_start_converges_quickly() {
    let (_, ctx) = setup(0.0, 0, 0.2);
    let cfg = NmpcConfig::default();
    let err = Vec2::new(0.05, 0.02);
    let cold = solve(err, &ctx, &cfg, None).unwrap();
    let warm = solve(err, &ctx, &cfg, Some(&cold)).unwrap();
    assert!(warm.iterations <= cold.iterations);
    for (a, b) in cold.blocks.iter().zip(&warm.blocks) {
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }
}
