//! Phase-based nonlinear MPC on the DCM error. Each previewed phase carries
//! nine decision variables: control ZMP endpoints, a step adjustment, the DCM
//! offset error at the phase end and a duration change. The nonlinear
//! endpoint constraint is handled by SQP over dense QP subproblems.

use nalgebra::{DMatrix, DVector, SMatrix};

use crate::error::{Error, Result};
use crate::gait::{GaitSchedule, PhaseType, ReferenceTrajectory};
use crate::lipm::{z_alpha_raw, z_beta_raw, Vec2, ZmpSegment};
use crate::qp::{QpProblem, QpSolver, QpStatus, WarmStart, INFINITY_BOUND};

/// Number of scalars per phase.
pub const BLOCK_SIZE: usize = 9;
const Z0: usize = 0;
const ZT: usize = 2;
const STEP: usize = 4;
const BERR: usize = 6;
const DT: usize = 8;

/// Accept QP steps flagged `MaxIter` when the KKT residual is this small.
const QP_ACCEPT_KKT: f64 = 1e-6;
const ARMIJO: f64 = 1e-4;
const MIN_STEP_LENGTH: f64 = 1.0 / 64.0;
const EARLY_EXIT_RESIDUAL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecisionBlock {
    pub zmp_start_ctrl: Vec2,
    pub zmp_end_ctrl: Vec2,
    pub step_ctrl: Vec2,
    pub dcm_offset_err: Vec2,
    pub duration_delta: f64,
}

impl DecisionBlock {
    pub fn to_array(&self) -> [f64; BLOCK_SIZE] {
        [
            self.zmp_start_ctrl.x,
            self.zmp_start_ctrl.y,
            self.zmp_end_ctrl.x,
            self.zmp_end_ctrl.y,
            self.step_ctrl.x,
            self.step_ctrl.y,
            self.dcm_offset_err.x,
            self.dcm_offset_err.y,
            self.duration_delta,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), BLOCK_SIZE, "decision block needs {BLOCK_SIZE} scalars");
        Self {
            zmp_start_ctrl: Vec2::new(v[0], v[1]),
            zmp_end_ctrl: Vec2::new(v[2], v[3]),
            step_ctrl: Vec2::new(v[4], v[5]),
            dcm_offset_err: Vec2::new(v[6], v[7]),
            duration_delta: v[8],
        }
    }

    /// ZMP control at `t` when interpolated over `duration`.
    pub fn zmp_ctrl_at(&self, t: f64, duration: f64) -> Vec2 {
        let s = (t / duration).clamp(0.0, 1.0);
        self.zmp_start_ctrl.lerp(self.zmp_end_ctrl, s)
    }
}

pub fn stack_blocks(blocks: &[DecisionBlock]) -> DVector<f64> {
    DVector::from_iterator(
        blocks.len() * BLOCK_SIZE,
        blocks.iter().flat_map(|b| b.to_array()),
    )
}

pub fn unstack_blocks(v: &DVector<f64>) -> Vec<DecisionBlock> {
    v.as_slice()
        .chunks(BLOCK_SIZE)
        .map(DecisionBlock::from_slice)
        .collect()
}

/// Diagonal cost weights of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpcWeights {
    pub zmp_start: Vec2,
    pub zmp_end: Vec2,
    pub step: Vec2,
    pub dcm_offset: Vec2,
    pub duration: f64,
}

impl Default for NmpcWeights {
    fn default() -> Self {
        Self {
            zmp_start: Vec2::new(1.0, 1.0),
            zmp_end: Vec2::new(1.0, 1.0),
            step: Vec2::new(0.01, 0.01),
            dcm_offset: Vec2::new(500.0, 500.0),
            duration: 100.0,
        }
    }
}

impl NmpcWeights {
    pub fn diagonal(&self) -> [f64; BLOCK_SIZE] {
        DecisionBlock {
            zmp_start_ctrl: self.zmp_start,
            zmp_end_ctrl: self.zmp_end,
            step_ctrl: self.step,
            dcm_offset_err: self.dcm_offset,
            duration_delta: self.duration,
        }
        .to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpcConfig {
    pub n_phases: usize,
    pub weights: NmpcWeights,
    /// Box on the control ZMP, relative to the reference ZMP. The toe side
    /// reaches further than the heel side.
    pub zmp_ctrl_lower: Vec2,
    pub zmp_ctrl_upper: Vec2,
    /// Symmetric box on the SSP step adjustment.
    pub step_ctrl_bounds_ssp: Vec2,
    /// Minimum lateral distance between an adjusted landing and its support foot.
    pub step_clearance: f64,
    pub duration_delta_bounds_ssp: (f64, f64),
    pub duration_delta_bounds_dsp: (f64, f64),
    pub dsp_min_duration: f64,
    /// The current phase must last at least this long past the elapsed time.
    pub min_remaining: f64,
    pub max_sqp_iters: usize,
    pub sqp_tolerance: f64,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            n_phases: 3,
            weights: NmpcWeights::default(),
            zmp_ctrl_lower: Vec2::new(-0.07, -0.07),
            zmp_ctrl_upper: Vec2::new(0.15, 0.07),
            step_ctrl_bounds_ssp: Vec2::new(0.30, 0.30),
            step_clearance: 0.16,
            duration_delta_bounds_ssp: (-0.3, 0.2),
            duration_delta_bounds_dsp: (-0.2, 0.2),
            dsp_min_duration: 0.10,
            min_remaining: 0.01,
            max_sqp_iters: 20,
            sqp_tolerance: 1e-6,
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_phases == 0 {
            return bad("n_phases must be at least 1");
        }
        if !self.weights.diagonal().iter().all(|w| *w > 0.0 && w.is_finite()) {
            return bad("all NMPC weights must be positive");
        }
        let ordered = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(ordered(self.zmp_ctrl_lower.x, self.zmp_ctrl_upper.x)
            && ordered(self.zmp_ctrl_lower.y, self.zmp_ctrl_upper.y))
        {
            return bad("ZMP control bounds are not ordered");
        }
        if !(self.step_ctrl_bounds_ssp.x >= 0.0 && self.step_ctrl_bounds_ssp.y >= 0.0) {
            return bad("step bounds must be non-negative");
        }
        let (a, b) = self.duration_delta_bounds_ssp;
        let (c, d) = self.duration_delta_bounds_dsp;
        if !(ordered(a, b) && ordered(c, d)) {
            return bad("duration bounds are not ordered");
        }
        if !(self.dsp_min_duration > 0.0 && self.min_remaining > 0.0) {
            return bad("minimum durations must be positive");
        }
        if !(self.step_clearance >= 0.0) {
            return bad("step clearance must be non-negative");
        }
        if self.max_sqp_iters == 0 || !(self.sqp_tolerance > 0.0) {
            return bad("SQP limits must be positive");
        }
        Ok(())
    }

    /// `[lo, hi]` for the duration change of a phase with nominal duration `t_nom`.
    pub fn duration_bounds(&self, phase_type: PhaseType, t_nom: f64) -> (f64, f64) {
        match phase_type {
            PhaseType::Ssp => self.duration_delta_bounds_ssp,
            PhaseType::Dsp => {
                let (lo, hi) = self.duration_delta_bounds_dsp;
                (lo.max(self.dsp_min_duration - t_nom).min(hi), hi)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// ZMP, step location, SSP and DSP duration.
    M1,
    /// Fixed DSP duration.
    M2,
    /// Fixed SSP and DSP durations.
    M3,
    /// ZMP modulation only.
    M4,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::M1, Method::M2, Method::M3, Method::M4];

    pub fn name(self) -> &'static str {
        match self {
            Method::M1 => "M1",
            Method::M2 => "M2",
            Method::M3 => "M3",
            Method::M4 => "M4",
        }
    }
}

/// Restrict `base` to the freedoms of `method`.
pub fn ablation_config(method: Method, base: &NmpcConfig) -> NmpcConfig {
    let mut cfg = *base;
    if matches!(method, Method::M2 | Method::M3 | Method::M4) {
        cfg.duration_delta_bounds_dsp = (0.0, 0.0);
    }
    if matches!(method, Method::M3 | Method::M4) {
        cfg.duration_delta_bounds_ssp = (0.0, 0.0);
    }
    if method == Method::M4 {
        cfg.step_ctrl_bounds_ssp = Vec2::ZERO;
    }
    cfg
}

/// Everything the endpoint constraint of one previewed phase needs besides
/// its decision block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseContext {
    pub phase_type: PhaseType,
    pub nominal_duration: f64,
    pub ref_zmp: ZmpSegment,
    /// Reference DCM at `elapsed` (phase 1) or at the phase start.
    pub dcm_ref: Vec2,
    /// Time already spent in the phase; zero for every phase but the first.
    pub elapsed: f64,
    pub support_foot: Vec2,
    pub landing_foot: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePreviewContext {
    pub time_constant: f64,
    pub phases: Vec<PhaseContext>,
    /// Fix the first block's start ZMP control, e.g. right after a transition.
    pub pinned_zmp_start: Option<Vec2>,
}

impl PhasePreviewContext {
    /// Preview `n_phases` phases from the schedule's current phase, `elapsed`
    /// seconds in. The reference window must start at nominal phase time
    /// `min(elapsed, T_1)`.
    pub fn build(
        schedule: &GaitSchedule,
        refs: &ReferenceTrajectory,
        elapsed: f64,
        n_phases: usize,
        time_constant: f64,
    ) -> Result<Self> {
        let first = schedule.current_index;
        if first + n_phases > schedule.len() {
            return Err(Error::InvalidConfig(format!(
                "schedule has {} phases left, {} previewed",
                schedule.len() - first,
                n_phases
            )));
        }
        let mut phases = Vec::with_capacity(n_phases);
        let mut start_offset = 0.0;
        for k in 0..n_phases {
            let spec = schedule.phase(first + k);
            let t_nom = spec.nominal_duration;
            let (dcm_ref, t) = if k == 0 {
                let tau = elapsed.min(t_nom);
                start_offset = t_nom - tau;
                let xi = if elapsed > t_nom {
                    // Past the nominal end the reference window is frozen at
                    // the phase end; extend the closed form backward in time.
                    let (z0, zt, b) = (spec.ref_zmp.start, spec.ref_zmp.end, time_constant);
                    z_beta_raw(z0, zt, t_nom, elapsed, b)
                        + (refs.dcm[0] - z_alpha_raw(z0, zt, t_nom, b))
                            * (-(t_nom - elapsed) / b).exp()
                } else {
                    refs.dcm[0]
                };
                (xi, elapsed)
            } else {
                let idx = refs.index_of(start_offset).ok_or_else(|| {
                    Error::InvalidConfig("reference window shorter than the preview".into())
                })?;
                start_offset += t_nom;
                (refs.dcm[idx], 0.0)
            };
            phases.push(PhaseContext {
                phase_type: spec.phase_type,
                nominal_duration: t_nom,
                ref_zmp: spec.ref_zmp,
                dcm_ref,
                elapsed: t,
                support_foot: spec.support_foot,
                landing_foot: spec.landing_foot,
            });
        }
        Ok(Self {
            time_constant,
            phases,
            pinned_zmp_start: None,
        })
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

struct Terms {
    tn: f64,
    en: f64,
    e: f64,
}

fn terms(ctx: &PhaseContext, block: &DecisionBlock, b: f64) -> Result<Terms> {
    let t = ctx.elapsed;
    let tn = ctx.nominal_duration + block.duration_delta;
    if !(tn > t) || !(tn > 0.0) {
        return Err(Error::DurationBelowElapsed {
            t_new: tn,
            elapsed: t,
        });
    }
    Ok(Terms {
        tn,
        en: ((tn - t) / b).exp(),
        e: ((ctx.nominal_duration - t) / b).exp(),
    })
}

/// Endpoint DCM constraint of one phase: zero when the step adjustment plus
/// the offset error equals the predicted DCM error at the adjusted phase end.
pub fn residual(
    ctx: &PhaseContext,
    block: &DecisionBlock,
    xi_err_in: Vec2,
    time_constant: f64,
) -> Result<Vec2> {
    let b = time_constant;
    let Terms { tn, en, e } = terms(ctx, block, b)?;
    let t = ctx.elapsed;
    let tr = ctx.nominal_duration;
    let (r0, rt) = (ctx.ref_zmp.start, ctx.ref_zmp.end);
    let (c0, ct) = (block.zmp_start_ctrl, block.zmp_end_ctrl);
    let f = block.step_ctrl + block.dcm_offset_err - z_alpha_raw(c0, ct, tn, b)
        - z_alpha_raw(r0, rt, tn, b)
        + z_alpha_raw(r0, rt, tr, b)
        - (xi_err_in - z_beta_raw(c0, ct, tn, t, b)) * en
        - ctx.dcm_ref * (en - e)
        + z_beta_raw(r0, rt, tn, t, b) * en
        - z_beta_raw(r0, rt, tr, t, b) * e;
    Ok(f)
}

/// Partials of [`residual`]: 2x9 with respect to the block and 2x4 with
/// respect to the previous block's step adjustment and offset error.
pub fn residual_jacobian(
    ctx: &PhaseContext,
    block: &DecisionBlock,
    xi_err_in: Vec2,
    time_constant: f64,
) -> Result<(SMatrix<f64, 2, 9>, SMatrix<f64, 2, 4>)> {
    let b = time_constant;
    let Terms { tn, en, .. } = terms(ctx, block, b)?;
    let t = ctx.elapsed;
    let (r0, rt) = (ctx.ref_zmp.start, ctx.ref_zmp.end);
    let (c0, ct) = (block.zmp_start_ctrl, block.zmp_end_ctrl);

    let d_z0 = b / tn + en * (1.0 - (t + b) / tn);
    let d_zt = -(1.0 + b / tn) + en * (t + b) / tn;
    let d_alpha = |z0: Vec2, zt: Vec2| (zt - z0) * (-b / (tn * tn));
    let d_beta = |z0: Vec2, zt: Vec2| (zt - z0) * (-(t + b) / (tn * tn));
    let d_dt = -d_alpha(c0, ct) - d_alpha(r0, rt)
        - (xi_err_in - z_beta_raw(c0, ct, tn, t, b)) * (en / b)
        + d_beta(c0, ct) * en
        - ctx.dcm_ref * (en / b)
        + z_beta_raw(r0, rt, tn, t, b) * (en / b)
        + d_beta(r0, rt) * en;

    let mut j = SMatrix::<f64, 2, 9>::zeros();
    for a in 0..2 {
        j[(a, Z0 + a)] = d_z0;
        j[(a, ZT + a)] = d_zt;
        j[(a, STEP + a)] = 1.0;
        j[(a, BERR + a)] = 1.0;
        j[(a, DT)] = d_dt.get(a);
    }
    let mut coupling = SMatrix::<f64, 2, 4>::zeros();
    for a in 0..2 {
        coupling[(a, a)] = -en;
        coupling[(a, 2 + a)] = -en;
    }
    Ok((j, coupling))
}

/// Second derivative of [`residual`] in the duration change, per axis.
fn duration_curvature(
    ctx: &PhaseContext,
    block: &DecisionBlock,
    xi_err_in: Vec2,
    time_constant: f64,
) -> Result<Vec2> {
    let b = time_constant;
    let Terms { tn, en, .. } = terms(ctx, block, b)?;
    let t = ctx.elapsed;
    let (r0, rt) = (ctx.ref_zmp.start, ctx.ref_zmp.end);
    let (c0, ct) = (block.zmp_start_ctrl, block.zmp_end_ctrl);
    let (dc, dr) = (ct - c0, rt - r0);
    let tn2 = tn * tn;
    let tn3 = tn2 * tn;
    let s = t + b;

    let g = xi_err_in - z_beta_raw(c0, ct, tn, t, b);
    let g1 = dc * (s / tn2);
    let g2 = dc * (-2.0 * s / tn3);
    let k = z_beta_raw(r0, rt, tn, t, b);
    let k1 = dr * (-s / tn2);
    let k2 = dr * (2.0 * s / tn3);
    Ok(-(dc + dr) * (2.0 * b / tn3) - (g / (b * b) + g1 * (2.0 / b) + g2) * en
        - ctx.dcm_ref * (en / (b * b))
        + (k / (b * b) + k1 * (2.0 / b) + k2) * en)
}

/// Multipliers of the endpoint rows at a point where they hold exactly,
/// from stationarity in the offset errors (which appear nowhere else).
fn endpoint_multipliers(ctx: &PhasePreviewContext, blocks: &[DecisionBlock], w_offset: Vec2) -> Vec<Vec2> {
    let nc = blocks.len();
    let mut lam = vec![Vec2::ZERO; nc];
    for i in (0..nc).rev() {
        let b = blocks[i].dcm_offset_err;
        let mut l = Vec2::new(2.0 * w_offset.x * b.x, 2.0 * w_offset.y * b.y);
        if i + 1 < nc {
            let next = &ctx.phases[i + 1];
            let tn = next.nominal_duration + blocks[i + 1].duration_delta;
            let en = ((tn - next.elapsed) / ctx.time_constant).exp();
            l += lam[i + 1] * en;
        }
        lam[i] = l;
    }
    lam
}

/// Mixed second derivatives of [`residual`] in the duration change and,
/// respectively, the start control ZMP, the end control ZMP and the incoming
/// error. Each acts identically on both axes.
fn duration_cross(ctx: &PhaseContext, block: &DecisionBlock, time_constant: f64) -> Result<(f64, f64, f64)> {
    let b = time_constant;
    let Terms { tn, en, .. } = terms(ctx, block, b)?;
    let s = ctx.elapsed + b;
    let tn2 = tn * tn;
    let d_z0 = -b / tn2 + (en / b) * (1.0 - s / tn) + en * s / tn2;
    let d_zt = b / tn2 + (en / b) * s / tn - en * s / tn2;
    Ok((d_z0, d_zt, -en / b))
}

/// Lagrangian curvature of the endpoint rows. The residuals are linear in
/// everything but the duration changes, so only their rows and columns
/// receive curvature. With `full` unset only the convex part of each
/// diagonal entry is kept.
fn add_duration_curvature(
    hessian: &mut DMatrix<f64>,
    state_err: Vec2,
    ctx: &PhasePreviewContext,
    blocks: &[DecisionBlock],
    w_offset: Vec2,
    full: bool,
) -> Result<()> {
    let lam = endpoint_multipliers(ctx, blocks, w_offset);
    for (i, (pc, blk)) in ctx.phases.iter().zip(blocks).enumerate() {
        let c = duration_curvature(pc, blk, error_in(i, state_err, blocks), ctx.time_constant)?;
        let k = i * BLOCK_SIZE + DT;
        if !full {
            hessian[(k, k)] += (-lam[i].dot(c)).max(0.0);
            continue;
        }
        hessian[(k, k)] -= lam[i].dot(c);
        let (dz0, dzt, de) = duration_cross(pc, blk, ctx.time_constant)?;
        let mut cross = |col: usize, value: f64| {
            hessian[(k, col)] -= value;
            hessian[(col, k)] -= value;
        };
        for a in 0..2 {
            let l = lam[i].get(a);
            cross(i * BLOCK_SIZE + Z0 + a, l * dz0);
            cross(i * BLOCK_SIZE + ZT + a, l * dzt);
            if i > 0 {
                cross((i - 1) * BLOCK_SIZE + STEP + a, l * de);
                cross((i - 1) * BLOCK_SIZE + BERR + a, l * de);
            }
        }
    }
    Ok(())
}

/// Subproblem Hessian: the exact Lagrangian Hessian when it is positive
/// definite on the null space of the equalities and the previously active
/// bounds, otherwise the cost Hessian plus the convex duration curvature.
/// Adding `rho * A'A` over those rows leaves the subproblem solution
/// unchanged while they stay binding, since `|A dv|^2` is then constant.
fn subproblem_hessian(
    qp: &QpProblem,
    active: Option<&WarmStart>,
    state_err: Vec2,
    ctx: &PhasePreviewContext,
    blocks: &[DecisionBlock],
    w_offset: Vec2,
) -> Result<DMatrix<f64>> {
    let mut h = qp.hessian.clone();
    add_duration_curvature(&mut h, state_err, ctx, blocks, w_offset, true)?;
    if h.clone().cholesky().is_some() {
        return Ok(h);
    }
    let mut ata = qp.eq_matrix.transpose() * &qp.eq_matrix;
    for a in active.map_or(&[][..], |w| &w.active[..]) {
        let r = qp.ineq_matrix.row(a.row);
        ata += r.transpose() * r;
    }
    let scale = h.amax().max(1.0) / ata.amax().max(f64::MIN_POSITIVE);
    for rho in [1e-2, 1.0, 1e2, 1e4] {
        let aug = &h + &ata * (rho * scale);
        if aug.clone().cholesky().is_some() {
            return Ok(aug);
        }
    }
    let mut h = qp.hessian.clone();
    add_duration_curvature(&mut h, state_err, ctx, blocks, w_offset, false)?;
    Ok(h)
}

/// DCM error entering phase `i`: the measured error for the first phase, the
/// previous block's predicted endpoint error afterwards.
fn error_in(i: usize, state_err: Vec2, blocks: &[DecisionBlock]) -> Vec2 {
    if i == 0 {
        state_err
    } else {
        blocks[i - 1].step_ctrl + blocks[i - 1].dcm_offset_err
    }
}

/// Stacked nonlinear residuals followed by the linear equality residuals.
pub fn constraint_values(
    state_err: Vec2,
    ctx: &PhasePreviewContext,
    blocks: &[DecisionBlock],
) -> Result<DVector<f64>> {
    let mut out = Vec::with_capacity(4 * blocks.len() + 2);
    for (i, (pc, blk)) in ctx.phases.iter().zip(blocks).enumerate() {
        let f = residual(pc, blk, error_in(i, state_err, blocks), ctx.time_constant)?;
        out.extend([f.x, f.y]);
    }
    for i in 0..blocks.len().saturating_sub(1) {
        let d = blocks[i].zmp_end_ctrl - blocks[i + 1].zmp_start_ctrl;
        out.extend([d.x, d.y]);
    }
    for (pc, blk) in ctx.phases.iter().zip(blocks) {
        if pc.phase_type == PhaseType::Dsp {
            out.extend([blk.step_ctrl.x, blk.step_ctrl.y]);
        }
    }
    if let Some(pin) = ctx.pinned_zmp_start {
        let d = blocks[0].zmp_start_ctrl - pin;
        out.extend([d.x, d.y]);
    }
    Ok(DVector::from_vec(out))
}

/// Largest nonlinear endpoint residual.
pub fn dynamics_residual(
    state_err: Vec2,
    ctx: &PhasePreviewContext,
    blocks: &[DecisionBlock],
) -> Result<f64> {
    let c = constraint_values(state_err, ctx, blocks)?;
    Ok(c.rows(0, 2 * blocks.len()).amax())
}

/// Box bounds on every scalar of the stacked vector, relative to the anchor
/// from [`zmp_anchors`] where one exists.
fn variable_bounds(ctx: &PhasePreviewContext, cfg: &NmpcConfig) -> (Vec<f64>, Vec<f64>) {
    let n = ctx.len() * BLOCK_SIZE;
    let mut lo = vec![-INFINITY_BOUND; n];
    let mut hi = vec![INFINITY_BOUND; n];
    for (i, pc) in ctx.phases.iter().enumerate() {
        let o = i * BLOCK_SIZE;
        for a in 0..2 {
            for base in [Z0, ZT] {
                lo[o + base + a] = cfg.zmp_ctrl_lower.get(a);
                hi[o + base + a] = cfg.zmp_ctrl_upper.get(a);
            }
            if pc.phase_type == PhaseType::Ssp {
                let s = cfg.step_ctrl_bounds_ssp.get(a);
                lo[o + STEP + a] = -s;
                hi[o + STEP + a] = s;
            }
        }
        let (mut dlo, dhi) = cfg.duration_bounds(pc.phase_type, pc.nominal_duration);
        if i == 0 {
            dlo = dlo.max(pc.elapsed - pc.nominal_duration + cfg.min_remaining).min(dhi);
        }
        lo[o + DT] = dlo;
        hi[o + DT] = dhi;
    }
    (lo, hi)
}

/// For each stacked scalar, the column of the step adjustment that moves the
/// foot it is bounded on. A ZMP endpoint on a foot placed by a previewed SSP
/// stays within the box around the adjusted foot: `lo <= z - f_j <= hi`.
fn zmp_anchors(ctx: &PhasePreviewContext) -> Vec<Option<usize>> {
    let n = ctx.len() * BLOCK_SIZE;
    let mut out = vec![None; n];
    for (i, pc) in ctx.phases.iter().enumerate() {
        let mut before = (0..i)
            .rev()
            .filter(|&j| ctx.phases[j].phase_type == PhaseType::Ssp);
        let latest = before.next();
        let (start, end) = match pc.phase_type {
            PhaseType::Ssp => (latest, latest),
            PhaseType::Dsp => (before.next(), latest),
        };
        let o = i * BLOCK_SIZE;
        for a in 0..2 {
            out[o + Z0 + a] = start.map(|j| j * BLOCK_SIZE + STEP + a);
            out[o + ZT + a] = end.map(|j| j * BLOCK_SIZE + STEP + a);
        }
    }
    out
}

/// Lateral clearance rows `s * (f_i,y - f_j,y) >= lb`: SSP `i` lands beside
/// the foot placed by SSP `j`, when `j` is also previewed.
fn clearance_rows(ctx: &PhasePreviewContext, cfg: &NmpcConfig) -> Vec<(usize, Option<usize>, f64, f64)> {
    let mut rows = Vec::new();
    if cfg.step_ctrl_bounds_ssp.y == 0.0 {
        return rows;
    }
    for (i, pc) in ctx.phases.iter().enumerate() {
        if pc.phase_type != PhaseType::Ssp {
            continue;
        }
        let gap = pc.landing_foot.y - pc.support_foot.y;
        if gap == 0.0 {
            continue;
        }
        let s = gap.signum();
        let lb = (cfg.step_clearance - gap.abs()).min(0.0);
        let prev = (0..i)
            .rev()
            .find(|&j| ctx.phases[j].phase_type == PhaseType::Ssp);
        rows.push((i, prev, s, lb));
    }
    rows
}

/// Linearized subproblem in the step `dv` around `v`.
pub fn assemble_subproblem(
    state_err: Vec2,
    ctx: &PhasePreviewContext,
    v: &DVector<f64>,
    cfg: &NmpcConfig,
) -> Result<QpProblem> {
    let nc = ctx.len();
    let n = nc * BLOCK_SIZE;
    if v.len() != n {
        return Err(Error::InvalidConfig(format!(
            "expected {n} decision variables, got {}",
            v.len()
        )));
    }
    let blocks = unstack_blocks(v);
    let diag = cfg.weights.diagonal();
    let w = DVector::from_iterator(n, (0..n).map(|k| 2.0 * diag[k % BLOCK_SIZE]));
    let hessian = DMatrix::from_diagonal(&w);
    let gradient = w.component_mul(v);

    let c = constraint_values(state_err, ctx, &blocks)?;
    let n_eq = c.len();
    let mut aeq = DMatrix::zeros(n_eq, n);
    let mut row = 0;
    for i in 0..nc {
        let xi_in = error_in(i, state_err, &blocks);
        let (j, coupling) = residual_jacobian(&ctx.phases[i], &blocks[i], xi_in, ctx.time_constant)?;
        for a in 0..2 {
            for k in 0..BLOCK_SIZE {
                aeq[(row + a, i * BLOCK_SIZE + k)] = j[(a, k)];
            }
            if i > 0 {
                let p = (i - 1) * BLOCK_SIZE;
                for k in 0..2 {
                    aeq[(row + a, p + STEP + k)] = coupling[(a, k)];
                    aeq[(row + a, p + BERR + k)] = coupling[(a, 2 + k)];
                }
            }
        }
        row += 2;
    }
    for i in 0..nc.saturating_sub(1) {
        for a in 0..2 {
            aeq[(row + a, i * BLOCK_SIZE + ZT + a)] = 1.0;
            aeq[(row + a, (i + 1) * BLOCK_SIZE + Z0 + a)] = -1.0;
        }
        row += 2;
    }
    for (i, pc) in ctx.phases.iter().enumerate() {
        if pc.phase_type == PhaseType::Dsp {
            for a in 0..2 {
                aeq[(row + a, i * BLOCK_SIZE + STEP + a)] = 1.0;
            }
            row += 2;
        }
    }
    if ctx.pinned_zmp_start.is_some() {
        for a in 0..2 {
            aeq[(row + a, Z0 + a)] = 1.0;
        }
        row += 2;
    }
    debug_assert_eq!(row, n_eq);
    let beq = -c;

    let (lo, hi) = variable_bounds(ctx, cfg);
    let anchors = zmp_anchors(ctx);
    let clear = clearance_rows(ctx, cfg);
    let m = n + clear.len();
    let mut ain = DMatrix::zeros(m, n);
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::zeros(m);
    for k in 0..n {
        ain[(k, k)] = 1.0;
        let mut value = v[k];
        if let Some(j) = anchors[k] {
            ain[(k, j)] = -1.0;
            value -= v[j];
        }
        lower[k] = shift_bound(lo[k], value);
        upper[k] = shift_bound(hi[k], value);
    }
    for (r, &(i, prev, s, lb)) in clear.iter().enumerate() {
        let yi = i * BLOCK_SIZE + STEP + 1;
        ain[(n + r, yi)] = s;
        let mut value = s * v[yi];
        if let Some(j) = prev {
            let yj = j * BLOCK_SIZE + STEP + 1;
            ain[(n + r, yj)] = -s;
            value -= s * v[yj];
        }
        lower[n + r] = lb - value;
        upper[n + r] = INFINITY_BOUND;
    }

    QpProblem::new(hessian, gradient)
        .and_then(|p| p.with_equalities(aeq, beq))
        .and_then(|p| p.with_inequalities(ain, lower, upper))
        .map_err(|e| Error::InvalidConfig(format!("subproblem assembly: {e}")))
}

fn shift_bound(bound: f64, v: f64) -> f64 {
    if bound.abs() >= INFINITY_BOUND {
        bound
    } else {
        bound - v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSolution {
    pub blocks: Vec<DecisionBlock>,
    pub iterations: usize,
    pub step_norm: f64,
    pub converged: bool,
    pub constraint_residual: f64,
}

impl NmpcSolution {
    pub fn zeros(n_phases: usize) -> Self {
        Self {
            blocks: vec![DecisionBlock::default(); n_phases],
            iterations: 0,
            step_norm: 0.0,
            converged: true,
            constraint_residual: 0.0,
        }
    }

    /// Warm start for the next phase: drop the first block and repeat the last.
    pub fn shifted(&self) -> Self {
        let mut s = self.clone();
        if s.blocks.len() > 1 {
            s.blocks.remove(0);
            let last = *s.blocks.last().expect("non-empty");
            s.blocks.push(last);
        }
        s
    }
}

/// Clamp the initial iterate into the variable box. Anchors always precede
/// the ZMP scalars they shift, so one forward pass suffices.
fn project(v: &mut DVector<f64>, ctx: &PhasePreviewContext, cfg: &NmpcConfig) {
    let (lo, hi) = variable_bounds(ctx, cfg);
    let anchors = zmp_anchors(ctx);
    for k in 0..v.len() {
        let shift = anchors[k].map_or(0.0, |j| v[j]);
        v[k] = (v[k] - shift).clamp(lo[k], hi[k]) + shift;
    }
}

/// Set every offset error so its endpoint constraint holds exactly. The
/// offset error enters its residual with an identity coefficient, so one
/// forward pass suffices. Returns `None` when a duration falls at or below
/// the elapsed time.
fn restore_offsets(state_err: Vec2, ctx: &PhasePreviewContext, v: &mut DVector<f64>) -> Option<()> {
    let mut e = state_err;
    for (i, pc) in ctx.phases.iter().enumerate() {
        let o = i * BLOCK_SIZE;
        let mut blk = DecisionBlock::from_slice(&v.as_slice()[o..o + BLOCK_SIZE]);
        let f = residual(pc, &blk, e, ctx.time_constant).ok()?;
        blk.dcm_offset_err -= f;
        v[o + BERR] = blk.dcm_offset_err.x;
        v[o + BERR + 1] = blk.dcm_offset_err.y;
        e = blk.step_ctrl + blk.dcm_offset_err;
    }
    Some(())
}

/// SQP on the stacked blocks. After every trial step the offset errors are
/// re-solved so the endpoint constraints hold exactly; the remaining linear
/// equalities enter an L1 merit function with a penalty kept above the
/// largest multiplier.
pub fn solve(
    state_err: Vec2,
    ctx: &PhasePreviewContext,
    cfg: &NmpcConfig,
    warm: Option<&NmpcSolution>,
) -> Result<NmpcSolution> {
    let nc = ctx.len();
    if nc != cfg.n_phases {
        return Err(Error::InvalidConfig(format!(
            "context previews {nc} phases, config expects {}",
            cfg.n_phases
        )));
    }
    if !state_err.is_finite() {
        return Err(Error::InvalidParams("non-finite DCM error".into()));
    }
    let mut v = match warm {
        Some(w) if w.blocks.len() == nc => stack_blocks(&w.blocks),
        _ => DVector::zeros(nc * BLOCK_SIZE),
    };
    project(&mut v, ctx, cfg);
    restore_offsets(state_err, ctx, &mut v).ok_or(Error::DurationBelowElapsed {
        t_new: ctx.phases[0].nominal_duration + v[DT],
        elapsed: ctx.phases[0].elapsed,
    })?;

    let diag = cfg.weights.diagonal();
    let cost = |v: &DVector<f64>| -> f64 {
        v.iter()
            .enumerate()
            .map(|(k, x)| diag[k % BLOCK_SIZE] * x * x)
            .sum()
    };
    let n_dyn = 2 * nc;
    let mut solver = QpSolver::default();
    let mut qp_warm: Option<WarmStart> = None;
    let mut penalty: f64 = 0.0;
    let mut iterations = 0;
    let mut step_norm = f64::INFINITY;
    let mut converged = false;

    while iterations < cfg.max_sqp_iters {
        let mut qp = assemble_subproblem(state_err, ctx, &v, cfg)?;
        qp.hessian = subproblem_hessian(
            &qp,
            qp_warm.as_ref(),
            state_err,
            ctx,
            &unstack_blocks(&v),
            cfg.weights.dcm_offset,
        )?;
        let sol = solver.solve(&qp, qp_warm.as_ref());
        let usable = match sol.status {
            QpStatus::Optimal => true,
            QpStatus::MaxIter => sol.kkt_residual <= QP_ACCEPT_KKT,
            _ => false,
        };
        if !usable || !sol.x.iter().all(|x| x.is_finite()) {
            return Err(Error::Qp(sol.status));
        }
        iterations += 1;
        qp_warm = Some(sol.warm_start());
        let dv = sol.x;
        step_norm = dv.norm();

        penalty = penalty.max(1.1 * sol.eq_multipliers.amax() + 1e-6);
        let linear_violation = |v: &DVector<f64>| -> Result<f64> {
            let c = constraint_values(state_err, ctx, &unstack_blocks(v))?;
            Ok(c.rows(n_dyn, c.len() - n_dyn).lp_norm(1))
        };
        let viol0 = linear_violation(&v)?;
        let phi0 = cost(&v) + penalty * viol0;
        let slope = (qp.gradient.dot(&dv) - penalty * viol0).min(0.0);

        let mut beta = 1.0;
        let mut accepted = None;
        loop {
            let mut trial = &v + &dv * beta;
            if restore_offsets(state_err, ctx, &mut trial).is_some() {
                let phi = cost(&trial) + penalty * linear_violation(&trial)?;
                if phi <= phi0 + ARMIJO * beta * slope || beta <= MIN_STEP_LENGTH {
                    accepted = Some(trial);
                    break;
                }
            } else if beta <= MIN_STEP_LENGTH {
                break;
            }
            beta *= 0.5;
        }
        let Some(next) = accepted else {
            break;
        };
        v = next;
        if step_norm < cfg.sqp_tolerance {
            converged = true;
            break;
        }
    }

    let blocks = unstack_blocks(&v);
    let constraint_residual = constraint_values(state_err, ctx, &blocks)?.amax();
    if !converged && constraint_residual <= EARLY_EXIT_RESIDUAL && step_norm < cfg.sqp_tolerance {
        converged = true;
    }
    Ok(NmpcSolution {
        blocks,
        iterations,
        step_norm,
        converged,
        constraint_residual,
    })
}

/// Worst-case structural measures of a solution against its context.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StructureReport {
    /// Largest `|z_T,i - z_0,i+1|`.
    pub continuity_gap: f64,
    /// Largest step adjustment in a DSP block.
    pub dsp_step: f64,
    /// Largest violation of any variable box or clearance row.
    pub bound_violation: f64,
    /// `T_new,1 - elapsed`.
    pub duration_margin: f64,
}

impl StructureReport {
    /// Continuity exact, DSP steps locked, bounds respected to `tol` and the
    /// first phase still running.
    pub fn holds(&self, tol: f64) -> bool {
        self.continuity_gap <= tol
            && self.dsp_step <= 1e-9
            && self.bound_violation <= tol
            && self.duration_margin > 0.0
    }
}

pub fn check_solution(
    ctx: &PhasePreviewContext,
    cfg: &NmpcConfig,
    blocks: &[DecisionBlock],
) -> StructureReport {
    let mut r = StructureReport::default();
    for w in blocks.windows(2) {
        let d = w[0].zmp_end_ctrl - w[1].zmp_start_ctrl;
        r.continuity_gap = r.continuity_gap.max(d.x.abs()).max(d.y.abs());
    }
    for (b, pc) in blocks.iter().zip(&ctx.phases) {
        if pc.phase_type == PhaseType::Dsp {
            r.dsp_step = r.dsp_step.max(b.step_ctrl.x.abs()).max(b.step_ctrl.y.abs());
        }
    }
    let v = stack_blocks(blocks);
    let (lo, hi) = variable_bounds(ctx, cfg);
    let anchors = zmp_anchors(ctx);
    for k in 0..v.len() {
        let x = v[k] - anchors[k].map_or(0.0, |j| v[j]);
        r.bound_violation = r.bound_violation.max(lo[k] - x).max(x - hi[k]);
    }
    for (i, prev, s, lb) in clearance_rows(ctx, cfg) {
        let yi = i * BLOCK_SIZE + STEP + 1;
        let mut value = s * v[yi];
        if let Some(j) = prev {
            value -= s * v[j * BLOCK_SIZE + STEP + 1];
        }
        r.bound_violation = r.bound_violation.max(lb - value);
    }
    if let (Some(b), Some(pc)) = (blocks.first(), ctx.phases.first()) {
        r.duration_margin = pc.nominal_duration + b.duration_delta - pc.elapsed;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const B: f64 = 0.2765;

    fn ssp_ctx(t: f64) -> PhaseContext {
        PhaseContext {
            phase_type: PhaseType::Ssp,
            nominal_duration: 0.6,
            ref_zmp: ZmpSegment::constant(Vec2::new(0.0, 0.1), 0.6).unwrap(),
            dcm_ref: Vec2::new(0.01, 0.05),
            elapsed: t,
            support_foot: Vec2::new(0.0, 0.1),
            landing_foot: Vec2::new(0.0, -0.1),
        }
    }

    #[test]
    fn block_round_trip() {
        let b = DecisionBlock::from_slice(&[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        assert_eq!(b.to_array(), [1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let v = stack_blocks(&[b, b]);
        assert_eq!(unstack_blocks(&v), vec![b, b]);
    }

    #[test]
    fn zero_block_zero_residual() {
        for t in [0.0, 0.2, 0.59] {
            let f = residual(&ssp_ctx(t), &DecisionBlock::default(), Vec2::ZERO, B).unwrap();
            assert!(f.norm() < 1e-14);
        }
    }

    #[test]
    fn pure_exponential_growth() {
        let t = 0.2;
        let e = Vec2::new(0.03, -0.01);
        let block = DecisionBlock {
            dcm_offset_err: e * ((0.6 - t) / B).exp(),
            ..Default::default()
        };
        let f = residual(&ssp_ctx(t), &block, e, B).unwrap();
        assert!(f.norm() < 1e-14);
    }

    #[test]
    fn duration_below_elapsed_is_rejected() {
        let block = DecisionBlock {
            duration_delta: -0.3,
            ..Default::default()
        };
        assert!(matches!(
            residual(&ssp_ctx(0.4), &block, Vec2::ZERO, B),
            Err(Error::DurationBelowElapsed { .. })
        ));
    }

    #[test]
    fn offset_jacobian_is_identity() {
        let block = DecisionBlock {
            zmp_start_ctrl: Vec2::new(0.01, 0.02),
            duration_delta: 0.1,
            ..Default::default()
        };
        let (j, c) = residual_jacobian(&ssp_ctx(0.1), &block, Vec2::new(0.1, 0.0), B).unwrap();
        assert_eq!(j[(0, BERR)], 1.0);
        assert_eq!(j[(1, BERR + 1)], 1.0);
        assert_eq!(j[(0, BERR + 1)], 0.0);
        assert_eq!(j[(0, STEP)], 1.0);
        let en = ((0.7 - 0.1) / B).exp();
        assert_relative_eq!(c[(0, 0)], -en, max_relative = 1e-14);
        assert_relative_eq!(c[(1, 3)], -en, max_relative = 1e-14);
    }

    #[test]
    fn duration_curvature_matches_differences() {
        let ctx = PhaseContext {
            ref_zmp: ZmpSegment::new(Vec2::new(0.0, 0.1), Vec2::new(0.2, -0.1), 0.6).unwrap(),
            ..ssp_ctx(0.15)
        };
        let block = DecisionBlock {
            zmp_start_ctrl: Vec2::new(0.02, -0.03),
            zmp_end_ctrl: Vec2::new(-0.04, 0.01),
            duration_delta: -0.05,
            ..Default::default()
        };
        let e = Vec2::new(0.04, -0.02);
        let h = 1e-4;
        let at = |d: f64| {
            let blk = DecisionBlock {
                duration_delta: block.duration_delta + d,
                ..block
            };
            residual(&ctx, &blk, e, B).unwrap()
        };
        let fd = (at(h) - at(0.0) * 2.0 + at(-h)) / (h * h);
        let c = duration_curvature(&ctx, &block, e, B).unwrap();
        assert_relative_eq!(c.x, fd.x, max_relative = 1e-5);
        assert_relative_eq!(c.y, fd.y, max_relative = 1e-5);
    }

    #[test]
    fn duration_cross_matches_differences() {
        let ctx = PhaseContext {
            ref_zmp: ZmpSegment::new(Vec2::new(0.0, 0.1), Vec2::new(0.2, -0.1), 0.6).unwrap(),
            ..ssp_ctx(0.15)
        };
        let block = DecisionBlock {
            zmp_start_ctrl: Vec2::new(0.02, -0.03),
            zmp_end_ctrl: Vec2::new(-0.04, 0.01),
            duration_delta: -0.05,
            ..Default::default()
        };
        let e = Vec2::new(0.04, -0.02);
        let h = 1e-5;
        let jac = |d: f64| {
            let blk = DecisionBlock {
                duration_delta: block.duration_delta + d,
                ..block
            };
            residual_jacobian(&ctx, &blk, e, B).unwrap()
        };
        let ((jp, cp), (jm, cm)) = (jac(h), jac(-h));
        let (dz0, dzt, de) = duration_cross(&ctx, &block, B).unwrap();
        assert_relative_eq!(dz0, (jp[(0, Z0)] - jm[(0, Z0)]) / (2.0 * h), max_relative = 1e-6);
        assert_relative_eq!(dzt, (jp[(1, ZT + 1)] - jm[(1, ZT + 1)]) / (2.0 * h), max_relative = 1e-6);
        assert_relative_eq!(de, (cp[(0, 0)] - cm[(0, 0)]) / (2.0 * h), max_relative = 1e-6);
    }

    #[test]
    fn ablation_bounds() {
        let base = NmpcConfig::default();
        let m2 = ablation_config(Method::M2, &base);
        assert_eq!(m2.duration_delta_bounds_dsp, (0.0, 0.0));
        assert_eq!(m2.duration_delta_bounds_ssp, base.duration_delta_bounds_ssp);
        let m1 = ablation_config(Method::M1, &base);
        assert_eq!(m1, base);
        let m4 = ablation_config(Method::M4, &base);
        assert_eq!(m4.step_ctrl_bounds_ssp, Vec2::ZERO);
        assert_eq!(m4.duration_delta_bounds_ssp, (0.0, 0.0));
    }

    #[test]
    fn dsp_floor_sets_lower_duration_bound() {
        let cfg = NmpcConfig::default();
        let (lo, hi) = cfg.duration_bounds(PhaseType::Dsp, 0.3);
        assert_relative_eq!(lo, -0.2, epsilon = 1e-15);
        assert_eq!(hi, 0.2);
        let m2 = ablation_config(Method::M2, &cfg);
        assert_eq!(m2.duration_bounds(PhaseType::Dsp, 0.3), (0.0, 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(NmpcConfig::default().validate().is_ok());
        let mut c = NmpcConfig::default();
        c.weights.duration = 0.0;
        assert!(c.validate().is_err());
        let c = NmpcConfig {
            n_phases: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = NmpcConfig {
            duration_delta_bounds_ssp: (0.1, -0.1),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn shifted_warm_start() {
        let mut s = NmpcSolution::zeros(3);
        s.blocks[0].duration_delta = 1.0;
        s.blocks[2].duration_delta = 3.0;
        let w = s.shifted();
        assert_eq!(w.blocks.len(), 3);
        assert_eq!(w.blocks[0].duration_delta, 0.0);
        assert_eq!(w.blocks[1].duration_delta, 3.0);
        assert_eq!(w.blocks[2].duration_delta, 3.0);
    }
}
