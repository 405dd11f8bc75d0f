//! Fixtures shared by the controller benchmarks.

use nalgebra::DVector;
use phasewalk_core::gait::{
    build_schedule, plan_footsteps, CartState, PhaseTime, PreviewConfig, PreviewGenerator,
    WalkCommand,
};
use phasewalk_core::nmpc::{NmpcConfig, PhasePreviewContext};
use phasewalk_core::qp::QpProblem;
use phasewalk_core::sim::{SimConfig, World};
use phasewalk_core::{LipmParams, Vec2};

/// Preview context mid-way through the first single support of a forward walk.
pub fn preview_context(step_length: f64) -> PhasePreviewContext {
    let plan = plan_footsteps(&WalkCommand {
        step_length,
        n_steps: 10,
        ..Default::default()
    })
    .expect("plan");
    let mut schedule = build_schedule(&plan, 0.6, 0.3).expect("schedule");
    schedule.current_index = 2;
    let params = LipmParams::default();
    let gen = PreviewGenerator::new(params, PreviewConfig::default()).expect("generator");
    let tau = 0.3;
    let refs = gen.generate(&schedule, PhaseTime { index: 2, tau }, &CartState::default());
    PhasePreviewContext::build(&schedule, &refs, tau, NmpcConfig::default().n_phases, params.time_constant())
        .expect("context")
}

/// First SQP subproblem for a 3 cm forward DCM error.
pub fn subproblem() -> QpProblem {
    let ctx = preview_context(0.2);
    let cfg = NmpcConfig::default();
    let v = DVector::zeros(ctx.len() * phasewalk_core::nmpc::BLOCK_SIZE);
    phasewalk_core::nmpc::assemble_subproblem(Vec2::new(0.03, 0.0), &ctx, &v, &cfg).expect("subproblem")
}

/// A world one second into the default in-place walk.
pub fn warm_world() -> World {
    let mut world = World::new(SimConfig::default()).expect("world");
    world.run_until(1.0).expect("walk");
    world
}
