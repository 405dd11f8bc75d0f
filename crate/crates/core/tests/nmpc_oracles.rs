use phasewalk_core::gait::{
    build_schedule, plan_footsteps, CartState, PhaseTime, PhaseType, PreviewConfig,
    PreviewGenerator, WalkCommand,
};
use phasewalk_core::nmpc::{
    dynamics_residual, residual, residual_jacobian, DecisionBlock, PhaseContext,
    PhasePreviewContext,
};
use phasewalk_core::{LipmParams, Vec2, ZmpSegment};
use proptest::prelude::*;

const B: f64 = 0.276_505_547_473_596_5;

/// Integrate the DCM `xi' = (xi - z(s)) / b` from `t0` to `t1` (either
/// direction) with classic RK4.
fn rk4_dcm(xi0: Vec2, t0: f64, t1: f64, zmp: impl Fn(f64) -> Vec2) -> Vec2 {
    let n = 4000;
    let h = (t1 - t0) / n as f64;
    let f = |s: f64, xi: Vec2| (xi - zmp(s)) / B;
    let mut xi = xi0;
    let mut s = t0;
    for _ in 0..n {
        let k1 = f(s, xi);
        let k2 = f(s + h / 2.0, xi + k1 * (h / 2.0));
        let k3 = f(s + h / 2.0, xi + k2 * (h / 2.0));
        let k4 = f(s + h, xi + k3 * h);
        xi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        s += h;
    }
    xi
}

/// Endpoint residual from direct integration: the actual DCM runs under the
/// reference ZMP stretched to the new duration plus the control ZMP, and is
/// compared with the reference DCM at the nominal phase end.
fn oracle_residual(ctx: &PhaseContext, blk: &DecisionBlock, xi_err: Vec2) -> Vec2 {
    let t = ctx.elapsed;
    let tr = ctx.nominal_duration;
    let tn = tr + blk.duration_delta;
    let (r0, rt) = (ctx.ref_zmp.start, ctx.ref_zmp.end);
    let actual = rk4_dcm(ctx.dcm_ref + xi_err, t, tn, |s| {
        r0.lerp(rt, s / tn) + blk.zmp_start_ctrl.lerp(blk.zmp_end_ctrl, s / tn)
    });
    let reference = rk4_dcm(ctx.dcm_ref, t, tr, |s| r0.lerp(rt, s / tr));
    blk.step_ctrl + blk.dcm_offset_err - (actual - reference)
}

fn vec2(r: f64) -> impl Strategy<Value = Vec2> {
    (-r..r, -r..r).prop_map(|(x, y)| Vec2::new(x, y))
}

/// Random phase context plus a block whose duration keeps `T_new > t`.
fn case() -> impl Strategy<Value = (PhaseContext, DecisionBlock, Vec2)> {
    (
        prop::bool::ANY,
        vec2(0.3),
        vec2(0.3),
        vec2(0.3),
        0.0..1.0f64,
        (vec2(0.07), vec2(0.07), vec2(0.3), vec2(0.1)),
        0.0..1.0f64,
        vec2(0.1),
        0usize..3,
    )
        .prop_map(|(ssp, r0, rt, xr, tfrac, (c0, ct, f, berr), dfrac, e, end)| {
            let (phase_type, t_nom, lo, hi) = if ssp {
                (PhaseType::Ssp, 0.6, -0.3f64, 0.2)
            } else {
                (PhaseType::Dsp, 0.3, -0.2f64, 0.2)
            };
            let rt = if ssp { r0 } else { rt };
            let t = tfrac * (t_nom + hi - 0.02);
            let lo = lo.max(t - t_nom + 0.01);
            let dt = match end {
                0 => lo,
                1 => hi,
                _ => lo + dfrac * (hi - lo),
            };
            let ctx = PhaseContext {
                phase_type,
                nominal_duration: t_nom,
                ref_zmp: ZmpSegment::new(r0, rt, t_nom).unwrap(),
                dcm_ref: xr,
                elapsed: t,
                support_foot: r0,
                landing_foot: rt,
            };
            let blk = DecisionBlock {
                zmp_start_ctrl: c0,
                zmp_end_ctrl: ct,
                step_ctrl: f,
                dcm_offset_err: berr,
                duration_delta: dt,
            };
            (ctx, blk, e)
        })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn residual_matches_rk4_oracle((ctx, blk, e) in case()) {
        let f = residual(&ctx, &blk, e, B).unwrap();
        let o = oracle_residual(&ctx, &blk, e);
        prop_assert!((f - o).norm() <= 1e-8 * (1.0 + o.norm()), "closed {f:?} vs rk4 {o:?}");
    }
}

fn schedule_context(step_length: f64, phase: usize, frac: f64) -> PhasePreviewContext {
    let plan = plan_footsteps(&WalkCommand {
        step_length,
        n_steps: 12,
        ..Default::default()
    })
    .unwrap();
    let mut s = build_schedule(&plan, 0.6, 0.3).unwrap();
    s.current_index = phase;
    let params = LipmParams::default();
    let gen = PreviewGenerator::new(params, PreviewConfig::default()).unwrap();
    let tau = frac * s.current().nominal_duration;
    let refs = gen.generate(&s, PhaseTime { index: phase, tau }, &CartState::default());
    PhasePreviewContext::build(&s, &refs, tau, 3, params.time_constant()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zero_block_has_zero_residual(
        step_length in prop::sample::select(vec![0.0, 0.1, 0.3]),
        phase in 0usize..8,
        frac in 0.0..0.99f64,
    ) {
        let ctx = schedule_context(step_length, phase, frac);
        let b = ctx.time_constant;
        for p in &ctx.phases {
            let f = residual(p, &DecisionBlock::default(), Vec2::ZERO, b).unwrap();
            prop_assert!(f.norm() <= 1e-12, "phase {phase} t {frac}: {f:?}");
        }
        let blocks = vec![DecisionBlock::default(); ctx.phases.len()];
        prop_assert!(dynamics_residual(Vec2::ZERO, &ctx, &blocks).unwrap() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn jacobian_matches_central_differences((ctx, blk, e) in case()) {
        let h = 1e-6;
        let (j, coupling) = residual_jacobian(&ctx, &blk, e, B).unwrap();
        let base = blk.to_array();
        for k in 0..9 {
            let mut p = base;
            let mut m = base;
            p[k] += h;
            m[k] -= h;
            let fp = residual(&ctx, &DecisionBlock::from_slice(&p), e, B).unwrap();
            let fm = residual(&ctx, &DecisionBlock::from_slice(&m), e, B).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            for a in 0..2 {
                prop_assert!(close(j[(a, k)], fd.get(a), 1e-5), "col {k} axis {a}: {} vs {}", j[(a, k)], fd.get(a));
            }
        }
        // Coupling: the incoming error is the previous step plus offset error.
        for a in 0..2 {
            let mut ep = e;
            let mut em = e;
            ep.set(a, e.get(a) + h);
            em.set(a, e.get(a) - h);
            let fd = (residual(&ctx, &blk, ep, B).unwrap() - residual(&ctx, &blk, em, B).unwrap()) / (2.0 * h);
            for r in 0..2 {
                prop_assert!(close(coupling[(r, a)], fd.get(r), 1e-5));
                prop_assert!(close(coupling[(r, 2 + a)], fd.get(r), 1e-5));
            }
        }
    }
}

#[test]
fn duration_column_at_nominal_point() {
    let ctx = PhaseContext {
        phase_type: PhaseType::Dsp,
        nominal_duration: 0.3,
        ref_zmp: ZmpSegment::new(Vec2::new(0.0, 0.1), Vec2::new(0.3, -0.1), 0.3).unwrap(),
        dcm_ref: Vec2::new(0.05, 0.02),
        elapsed: 0.1,
        support_foot: Vec2::new(0.0, 0.1),
        landing_foot: Vec2::new(0.3, -0.1),
    };
    let blk = DecisionBlock::default();
    let (j, _) = residual_jacobian(&ctx, &blk, Vec2::ZERO, B).unwrap();
    let h = 1e-6;
    let mut p = blk;
    let mut m = blk;
    p.duration_delta = h;
    m.duration_delta = -h;
    let fd = (residual(&ctx, &p, Vec2::ZERO, B).unwrap() - residual(&ctx, &m, Vec2::ZERO, B).unwrap())
        / (2.0 * h);
    assert!(close(j[(0, 8)], fd.x, 1e-6));
    assert!(close(j[(1, 8)], fd.y, 1e-6));
    assert!(j[(0, 8)].abs() > 1e-3);
}
