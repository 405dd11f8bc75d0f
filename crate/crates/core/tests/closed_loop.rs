use std::sync::OnceLock;

use phasewalk_core::gait::PhaseType;
use phasewalk_core::lipm::dcm_of;
use phasewalk_core::sim::{
    physics_step, run_scenario, run_trial, swing_quintic, Disturbance, Event, Kinematic,
    SimConfig, SimLog, World,
};
use phasewalk_core::{LipmParams, RobotState, Vec2};

fn walk(duration: f64) -> SimConfig {
    SimConfig {
        duration,
        ..Default::default()
    }
}

/// The 30 s nominal in-place walk, shared by the regression tests.
fn nominal() -> &'static SimLog {
    static LOG: OnceLock<SimLog> = OnceLock::new();
    LOG.get_or_init(|| run_scenario(&walk(30.0)).unwrap())
}

#[test]
fn nominal_walk_does_not_fall() {
    let log = nominal();
    assert!(!log.fell());
    assert_eq!(log.nmpc_failures(), 0);
    assert_eq!(log.rows.len(), 3000);
    assert!(log.rows.windows(2).all(|w| w[1].time > w[0].time));
}

#[test]
fn nominal_walk_tracks_dcm_without_control() {
    let log = nominal();
    // Post-transient: after the first step cycle.
    let rows: Vec<_> = log.rows.iter().filter(|r| r.time >= 0.9).collect();
    let ms: f64 = rows.iter().map(|r| r.dcm_err.norm().powi(2)).sum::<f64>() / rows.len() as f64;
    assert!(ms.sqrt() <= 2e-3, "dcm rms {}", ms.sqrt());
    for r in &log.rows {
        assert!(r.zmp_ctrl.norm() <= 1e-3, "t {} zmp ctrl {:?}", r.time, r.zmp_ctrl);
    }
    for r in &rows {
        assert!(r.duration_delta.abs() <= 1e-3, "t {} dT {}", r.time, r.duration_delta);
    }
}

#[test]
fn nominal_walk_solver_budget() {
    let log = nominal();
    for r in log.rows.iter().filter(|r| r.time < 10.0) {
        assert!(r.converged && r.sqp_iterations <= 20 && r.sqp_step_norm < 1e-6, "{r:?}");
        assert!(r.structure.holds(1e-9), "{:?}", r.structure);
    }
    let mean = log.solve_times.iter().sum::<f64>() / log.solve_times.len() as f64;
    assert!(mean < 10e-3, "mean solve {mean}");
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = walk(3.0);
    cfg.disturbances = vec![Disturbance::directional(300.0, 90.0, 1.2, 0.2).unwrap()];
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.events, b.events);
    assert_eq!(a.rows.len(), cfg.n_ticks());
}

#[test]
fn swing_target_is_frozen_during_double_support() {
    let mut cfg = walk(4.0);
    // The first double support spans 0.6 to 0.9 s.
    cfg.disturbances = vec![Disturbance::directional(300.0, 60.0, 0.62, 0.2).unwrap()];
    let log = run_scenario(&cfg).unwrap();
    assert!(!log.fell());
    let dsp: Vec<_> = log
        .rows
        .iter()
        .filter(|r| r.phase_type == PhaseType::Dsp)
        .collect();
    for w in dsp.windows(2) {
        if w[0].phase_index == w[1].phase_index {
            assert_eq!(w[0].swing_target, w[1].swing_target);
            assert!(w[1].step_ctrl.norm() <= 1e-9);
        }
    }
}

#[test]
fn desired_zmp_is_continuous_across_transitions() {
    for push in [0.0, 250.0] {
        let mut cfg = walk(5.0);
        if push > 0.0 {
            cfg.disturbances = vec![Disturbance::directional(push, 120.0, 1.1, 0.2).unwrap()];
        }
        let period = cfg.control_period;
        let mut world = World::new(cfg).unwrap();
        let mut transitions = 0;
        let mut before = None;
        while world.time < 5.0 - 1e-9 {
            let n_events = world.log.events.len();
            assert!(world.step().unwrap());
            let crossed = world.log.events[n_events..]
                .iter()
                .any(|e| matches!(e, Event::PhaseTransition { .. }));
            let row = world.log.rows.last().unwrap();
            if let (true, Some(z)) = (crossed, before) {
                let z: Vec2 = z;
                assert!((row.zmp_des - z).norm() <= 1e-6, "t {}: {:?} vs {:?}", row.time, row.zmp_des, z);
                transitions += 1;
            }
            before = Some(world.desired_zmp(period));
        }
        assert!(transitions >= 8);
    }
}

#[test]
fn swing_replan_is_smooth() {
    let start = Kinematic {
        pos: Vec2::new(0.0, -0.1),
        ..Default::default()
    };
    let first = swing_quintic(start, Vec2::new(0.3, -0.1), 0.0, 0.6).unwrap();
    let t = 0.25;
    let second = swing_quintic(first.eval(t), Vec2::new(0.4, -0.1), t, 0.6).unwrap();
    let h = 1e-4;
    // One-sided differences on each side of the replan instant agree.
    let left = |q: &phasewalk_core::sim::SwingTrajectory| {
        let (a, b, c) = (q.eval(t - 2.0 * h), q.eval(t - h), q.eval(t));
        ((c.pos - b.pos) / h, (c.pos - b.pos * 2.0 + a.pos) / (h * h))
    };
    let right = |q: &phasewalk_core::sim::SwingTrajectory| {
        let (a, b, c) = (q.eval(t), q.eval(t + h), q.eval(t + 2.0 * h));
        ((b.pos - a.pos) / h, (c.pos - b.pos * 2.0 + a.pos) / (h * h))
    };
    let (v1, a1) = left(&first);
    let (v2, a2) = right(&second);
    assert!((first.eval(t).pos - second.eval(t).pos).norm() <= 1e-12);
    // First-order differences carry an O(h * acc) bias on each side.
    assert!((v1 - v2).norm() <= 1e-6 + h * (a1.norm() + a2.norm()), "{v1:?} {v2:?}");
    assert!((first.eval(t).acc - second.eval(t).acc).norm() <= 1e-6);
    assert!((a1 - a2).norm() <= 1e-2 * (1.0 + a1.norm()));
    let end = second.eval(0.6);
    assert!((end.pos - Vec2::new(0.4, -0.1)).norm() <= 1e-10);
}

#[test]
fn huge_push_falls_quickly_and_zero_push_recovers() {
    let mut cfg = walk(6.0);
    cfg.disturbances = vec![Disturbance::directional(50_000.0, 90.0, 1.2, 0.2).unwrap()];
    let log = run_scenario(&cfg).unwrap();
    let t = log.fall_time().expect("must fall");
    assert!(t - 1.2 <= 2.0, "fell at {t}");
    cfg.disturbances = vec![Disturbance::directional(0.0, 90.0, 1.2, 0.2).unwrap()];
    assert!(run_trial(&cfg, 0.005, 0.5).unwrap().recovered);
}

#[test]
fn lower_fall_threshold_never_rescues() {
    for mag in [400.0, 700.0, 1000.0] {
        let mut cfg = walk(5.0);
        cfg.disturbances = vec![Disturbance::directional(mag, 90.0, 1.2, 0.2).unwrap()];
        let loose = run_scenario(&cfg).unwrap().fell();
        cfg.fall.dcm_error = 0.2;
        let strict = run_scenario(&cfg).unwrap().fell();
        assert!(strict || !loose, "magnitude {mag}");
    }
}

#[test]
fn open_loop_dcm_diverges_exponentially() {
    let params = LipmParams::default();
    let b = params.time_constant();
    let z = Vec2::new(0.02, -0.01);
    let mut state = RobotState::at_rest(z + Vec2::new(0.01, 0.005));
    let gap0 = (dcm_of(&state, &params) - z).norm();
    let dt = 1e-5;
    let n = 50_000;
    for _ in 0..n {
        state = physics_step(&state, z, Vec2::ZERO, &params, dt);
    }
    let gap = (dcm_of(&state, &params) - z).norm();
    let expected = gap0 * (n as f64 * dt / b).exp();
    assert!((gap / expected - 1.0).abs() <= 1e-3, "{gap} vs {expected}");
}

#[test]
fn integrator_converges_at_first_order() {
    let params = LipmParams::default();
    let z = Vec2::ZERO;
    let run = |dt: f64| {
        let mut s = RobotState::at_rest(Vec2::new(0.01, 0.0));
        for _ in 0..(1.0 / dt).round() as usize {
            s = physics_step(&s, z, Vec2::ZERO, &params, dt);
        }
        s.com.x
    };
    // Exact: c(t) = c0 cosh(t / b).
    let exact = 0.01 * (1.0 / params.time_constant()).cosh();
    let e1 = (run(1e-3) - exact).abs();
    let e2 = (run(5e-4) - exact).abs();
    let ratio = e1 / e2;
    assert!((1.6..2.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn forward_walk_covers_two_meters() {
    let mut cfg = walk(10.0);
    cfg.gait.step_length = 0.3;
    cfg.gait.n_steps = 7;
    let log = run_scenario(&cfg).unwrap();
    assert!(!log.fell());
    let x = log.rows.last().unwrap().com.x;
    assert!((1.8..=2.2).contains(&x), "final x {x}");
}
