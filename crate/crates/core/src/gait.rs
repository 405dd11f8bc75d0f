//! Footstep planning, the SSP/DSP phase schedule, and the jerk-minimizing
//! preview generator that turns the reference ZMP into reference CoM and DCM
//! trajectories.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::lipm::{dcm_offset, DcmOffset, LipmParams, RobotState, Vec2, ZmpSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhaseType {
    Ssp,
    Dsp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Foot {
    Left,
    Right,
}

impl Foot {
    pub fn other(self) -> Foot {
        match self {
            Foot::Left => Foot::Right,
            Foot::Right => Foot::Left,
        }
    }

    /// +1 for the left foot (positive y), -1 for the right.
    pub fn lateral_sign(self) -> f64 {
        match self {
            Foot::Left => 1.0,
            Foot::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwingSide {
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stance {
    pub left: Vec2,
    pub right: Vec2,
}

impl Stance {
    pub fn foot(&self, foot: Foot) -> Vec2 {
        match foot {
            Foot::Left => self.left,
            Foot::Right => self.right,
        }
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.left + self.right) * 0.5
    }
}

impl Default for Stance {
    fn default() -> Self {
        Self {
            left: Vec2::new(0.0, 0.1),
            right: Vec2::new(0.0, -0.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footstep {
    pub foot: Foot,
    pub pos: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkCommand {
    pub step_length: f64,
    pub step_width: f64,
    pub n_steps: usize,
    pub start_stance: Stance,
    pub first_swing: Foot,
}

impl Default for WalkCommand {
    fn default() -> Self {
        Self {
            step_length: 0.0,
            step_width: 0.2,
            n_steps: 12,
            start_stance: Stance::default(),
            first_swing: Foot::Right,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootstepPlan {
    pub start: Stance,
    pub steps: Vec<Footstep>,
}

/// Alternating landings advancing by `step_length`, `step_width` apart.
pub fn plan_footsteps(cmd: &WalkCommand) -> Result<FootstepPlan> {
    if !(cmd.step_width > 0.0) {
        return Err(Error::NonPositiveWidth(cmd.step_width));
    }
    if cmd.n_steps == 0 {
        return Err(Error::EmptyFootsteps);
    }
    let mid = cmd.start_stance.midpoint();
    let mut foot = cmd.first_swing;
    let steps = (0..cmd.n_steps)
        .map(|k| {
            let pos = Vec2::new(
                mid.x + (k + 1) as f64 * cmd.step_length,
                mid.y + foot.lateral_sign() * 0.5 * cmd.step_width,
            );
            let step = Footstep { foot, pos };
            foot = foot.other();
            step
        })
        .collect();
    Ok(FootstepPlan {
        start: cmd.start_stance,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpec {
    pub phase_type: PhaseType,
    pub nominal_duration: f64,
    /// `f_0`: the support foot (SSP) or the trailing foot (DSP).
    pub support_foot: Vec2,
    /// `f_T`: the landing of the swing foot; inherited unchanged by the DSP.
    pub landing_foot: Vec2,
    pub ref_zmp: ZmpSegment,
    pub swing_side: SwingSide,
    /// Index of the footstep this phase lands (SSP) or settles on (DSP).
    pub step_index: usize,
}

/// Where a swing foot lifts off from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingInfo {
    pub foot: Foot,
    pub lift_off: Vec2,
}

/// Alternating SSP/DSP phases derived from a footstep list. Phase `2k` is the
/// SSP that lands footstep `k`, phase `2k + 1` the DSP that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitSchedule {
    start: Stance,
    steps: Vec<Footstep>,
    t_ssp: f64,
    t_dsp: f64,
    phases: Vec<PhaseSpec>,
    pub current_index: usize,
}

pub fn build_schedule(plan: &FootstepPlan, t_ssp: f64, t_dsp: f64) -> Result<GaitSchedule> {
    GaitSchedule::new(plan, t_ssp, t_dsp)
}

impl GaitSchedule {
    pub fn new(plan: &FootstepPlan, t_ssp: f64, t_dsp: f64) -> Result<Self> {
        if plan.steps.is_empty() {
            return Err(Error::EmptyFootsteps);
        }
        if !(t_ssp > 0.0 && t_dsp > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "phase durations must be positive, got {t_ssp} and {t_dsp}"
            )));
        }
        for w in plan.steps.windows(2) {
            if w[0].foot == w[1].foot {
                return Err(Error::InvalidConfig("footsteps must alternate feet".into()));
            }
        }
        let mut s = Self {
            start: plan.start,
            steps: plan.steps.clone(),
            t_ssp,
            t_dsp,
            phases: Vec::new(),
            current_index: 0,
        };
        s.rebuild()?;
        Ok(s)
    }

    fn rebuild(&mut self) -> Result<()> {
        let mut phases = Vec::with_capacity(2 * self.steps.len());
        for k in 0..self.steps.len() {
            let step = self.steps[k];
            let support = self.position_before(k, step.foot.other());
            let swing_side = match step.foot {
                Foot::Left => SwingSide::Left,
                Foot::Right => SwingSide::Right,
            };
            phases.push(PhaseSpec {
                phase_type: PhaseType::Ssp,
                nominal_duration: self.t_ssp,
                support_foot: support,
                landing_foot: step.pos,
                ref_zmp: ZmpSegment::constant(support, self.t_ssp)?,
                swing_side,
                step_index: k,
            });
            phases.push(PhaseSpec {
                phase_type: PhaseType::Dsp,
                nominal_duration: self.t_dsp,
                support_foot: support,
                landing_foot: step.pos,
                ref_zmp: ZmpSegment::new(support, step.pos, self.t_dsp)?,
                swing_side: SwingSide::None,
                step_index: k,
            });
        }
        self.phases = phases;
        Ok(())
    }

    /// Position of `foot` just before footstep `k` is taken.
    fn position_before(&self, k: usize, foot: Foot) -> Vec2 {
        self.steps[..k]
            .iter()
            .rev()
            .find(|s| s.foot == foot)
            .map(|s| s.pos)
            .unwrap_or_else(|| self.start.foot(foot))
    }

    pub fn phases(&self) -> &[PhaseSpec] {
        &self.phases
    }

    pub fn steps(&self) -> &[Footstep] {
        &self.steps
    }

    pub fn start_stance(&self) -> Stance {
        self.start
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phase(&self, i: usize) -> &PhaseSpec {
        &self.phases[i]
    }

    pub fn current(&self) -> &PhaseSpec {
        &self.phases[self.current_index]
    }

    pub fn nominal_durations(&self) -> (f64, f64) {
        (self.t_ssp, self.t_dsp)
    }

    /// Swing foot of an SSP and where it lifted off.
    pub fn swing_info(&self, i: usize) -> Option<SwingInfo> {
        let ph = &self.phases[i];
        if ph.phase_type != PhaseType::Ssp {
            return None;
        }
        let foot = self.steps[ph.step_index].foot;
        Some(SwingInfo {
            foot,
            lift_off: self.position_before(ph.step_index, foot),
        })
    }

    /// Feet in contact during phase `i`.
    pub fn contacts(&self, i: usize) -> Vec<Vec2> {
        let ph = &self.phases[i];
        match ph.phase_type {
            PhaseType::Ssp => vec![ph.support_foot],
            PhaseType::Dsp => vec![ph.support_foot, ph.landing_foot],
        }
    }

    /// Append in-place steps until `count` phases are available from
    /// `current_index` onward.
    pub fn ensure_remaining(&mut self, count: usize) -> Result<()> {
        let mut changed = false;
        while self.phases.len() + 2 * (self.steps.len() - self.phases.len() / 2)
            < self.current_index + count
        {
            let last = *self.steps.last().expect("schedule is never empty");
            let foot = last.foot.other();
            let pos = self.position_before(self.steps.len(), foot);
            self.steps.push(Footstep { foot, pos });
            changed = true;
        }
        if changed {
            self.rebuild()?;
        }
        Ok(())
    }

    /// Move footstep `k` and every later one by `offset`, e.g. after the
    /// swing foot touched down away from its plan.
    pub fn shift_steps_from(&mut self, k: usize, offset: Vec2) -> Result<()> {
        if offset == Vec2::ZERO {
            return Ok(());
        }
        for s in &mut self.steps[k..] {
            s.pos += offset;
        }
        self.rebuild()
    }

    pub fn advance(&mut self) {
        self.current_index += 1;
    }

    /// Reference ZMP `tau` seconds (nominal time) after the start of phase
    /// `index`. Past the last phase the final ZMP is held.
    pub fn zmp_at(&self, mut index: usize, mut tau: f64) -> Vec2 {
        loop {
            let ph = &self.phases[index];
            if tau <= ph.nominal_duration || index + 1 == self.phases.len() {
                return ph.ref_zmp.at_clamped(tau);
            }
            tau -= ph.nominal_duration;
            index += 1;
        }
    }
}

/// A position within the nominal timeline: phase index plus elapsed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTime {
    pub index: usize,
    pub tau: f64,
}

/// Triple-integrator CoM state of the preview generator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartState {
    pub com: Vec2,
    pub com_vel: Vec2,
    pub com_acc: Vec2,
}

impl CartState {
    pub fn translated(mut self, offset: Vec2) -> Self {
        self.com += offset;
        self
    }
}

impl From<RobotState> for CartState {
    fn from(s: RobotState) -> Self {
        Self {
            com: s.com,
            com_vel: s.com_vel,
            com_acc: Vec2::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreviewConfig {
    pub sample_period: f64,
    pub horizon: usize,
    pub jerk_weight: f64,
    pub zmp_weight: f64,
}

impl Default for PreviewConfig {
    fn default() -> Self {
        Self {
            sample_period: 0.01,
            horizon: 160,
            jerk_weight: 1e-6,
            zmp_weight: 1.0,
        }
    }
}

/// Reference trajectory over the preview window. Sample `k` is `k *
/// sample_period` after `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub sample_period: f64,
    pub start: PhaseTime,
    pub zmp: Vec<Vec2>,
    pub com: Vec<Vec2>,
    pub com_vel: Vec<Vec2>,
    pub com_acc: Vec<Vec2>,
    pub dcm: Vec<Vec2>,
    /// Reference DCM offsets of every phase whose end lies in the window.
    pub offsets: Vec<(usize, DcmOffset)>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.com.len()
    }

    pub fn is_empty(&self) -> bool {
        self.com.is_empty()
    }

    pub fn state(&self, k: usize) -> CartState {
        CartState {
            com: self.com[k],
            com_vel: self.com_vel[k],
            com_acc: self.com_acc[k],
        }
    }

    /// Sample index for a nominal-time offset from the window start.
    pub fn index_of(&self, dt: f64) -> Option<usize> {
        let k = (dt / self.sample_period).round();
        (k >= 0.0 && (k as usize) < self.len()).then_some(k as usize)
    }

    /// ZMP implied by the CoM samples, `c - (c_z - z_z)/g * c_ddot`.
    pub fn implied_zmp(&self, params: &LipmParams) -> Vec<Vec2> {
        let k = 1.0 / params.omega_sq();
        self.com
            .iter()
            .zip(&self.com_acc)
            .map(|(&c, &a)| c - a * k)
            .collect()
    }
}

/// Jerk-minimizing ZMP-tracking CoM generator over a receding horizon. The
/// problem has no inequality constraints, so its solution is a fixed linear
/// map of the initial state and the reference ZMP; both gains are factored
/// once at construction.
#[derive(Debug, Clone)]
pub struct PreviewGenerator {
    cfg: PreviewConfig,
    params: LipmParams,
    a: Matrix3<f64>,
    b: Vector3<f64>,
    /// Jerk sequence = `ref_gain * zmp_ref - state_gain * x0`.
    ref_gain: DMatrix<f64>,
    state_gain: DMatrix<f64>,
}

impl PreviewGenerator {
    pub fn new(params: LipmParams, cfg: PreviewConfig) -> Result<Self> {
        if !(cfg.jerk_weight > 0.0 && cfg.zmp_weight > 0.0) {
            return Err(Error::InvalidConfig("preview weights must be positive".into()));
        }
        if !(cfg.sample_period > 0.0) || cfg.horizon == 0 {
            return Err(Error::InvalidConfig("preview sampling must be positive".into()));
        }
        let t = cfg.sample_period;
        let n = cfg.horizon;
        let a = Matrix3::new(1.0, t, t * t / 2.0, 0.0, 1.0, t, 0.0, 0.0, 1.0);
        let b = Vector3::new(t * t * t / 6.0, t * t / 2.0, t);
        let c = nalgebra::RowVector3::new(1.0, 0.0, -1.0 / params.omega_sq());

        // Output rows for samples 1..=n.
        let mut px = DMatrix::zeros(n, 3);
        let mut pu = DMatrix::zeros(n, n);
        let mut a_pow = a;
        // c * A^(i-1-j) * B, built column-wise from the impulse response.
        let mut impulse = Vec::with_capacity(n);
        let mut ab = b;
        for _ in 0..n {
            impulse.push((c * ab)[0]);
            ab = a * ab;
        }
        for i in 0..n {
            let row = c * a_pow;
            px.set_row(i, &nalgebra::RowDVector::from_row_slice(row.as_slice()));
            a_pow *= a;
            for j in 0..=i {
                pu[(i, j)] = impulse[i - j];
            }
        }
        let mut h = pu.transpose() * &pu * cfg.zmp_weight;
        for i in 0..n {
            h[(i, i)] += cfg.jerk_weight;
        }
        let chol = nalgebra::Cholesky::new(h)
            .ok_or_else(|| Error::InvalidConfig("preview Hessian is not positive definite".into()))?;
        let ref_gain = chol.solve(&(pu.transpose() * cfg.zmp_weight));
        let state_gain = &ref_gain * &px;
        Ok(Self {
            cfg,
            params,
            a,
            b,
            ref_gain,
            state_gain,
        })
    }

    pub fn config(&self) -> &PreviewConfig {
        &self.cfg
    }

    pub fn params(&self) -> &LipmParams {
        &self.params
    }

    /// Reference trajectory starting at `start` from the generator state
    /// `initial`. The returned window has `horizon + 1` samples.
    pub fn generate(
        &self,
        schedule: &GaitSchedule,
        start: PhaseTime,
        initial: &CartState,
    ) -> ReferenceTrajectory {
        let n = self.cfg.horizon;
        let t = self.cfg.sample_period;
        let zmp: Vec<Vec2> = (0..=n)
            .map(|k| schedule.zmp_at(start.index, start.tau + k as f64 * t))
            .collect();

        let mut com = vec![Vec2::ZERO; n + 1];
        let mut vel = vec![Vec2::ZERO; n + 1];
        let mut acc = vec![Vec2::ZERO; n + 1];
        com[0] = initial.com;
        vel[0] = initial.com_vel;
        acc[0] = initial.com_acc;
        for axis in 0..2 {
            let x0 = Vector3::new(
                initial.com.get(axis),
                initial.com_vel.get(axis),
                initial.com_acc.get(axis),
            );
            let zref = DVector::from_iterator(n, zmp[1..].iter().map(|z| z.get(axis)));
            let jerk = &self.ref_gain * zref - &self.state_gain * x0;
            let mut x = x0;
            for k in 0..n {
                x = self.a * x + self.b * jerk[k];
                com[k + 1].set(axis, x[0]);
                vel[k + 1].set(axis, x[1]);
                acc[k + 1].set(axis, x[2]);
            }
        }
        let b = self.params.time_constant();
        let dcm = com.iter().zip(&vel).map(|(&c, &v)| c + v * b).collect();
        let mut traj = ReferenceTrajectory {
            sample_period: t,
            start,
            zmp,
            com,
            com_vel: vel,
            com_acc: acc,
            dcm,
            offsets: Vec::new(),
        };
        traj.offsets = reference_dcm_offset(schedule, &traj);
        traj
    }
}

/// `b_T^ref = xi^ref(phase end) - f_T` for every phase ending inside the window.
pub fn reference_dcm_offset(
    schedule: &GaitSchedule,
    traj: &ReferenceTrajectory,
) -> Vec<(usize, DcmOffset)> {
    let mut out = Vec::new();
    let mut end = -traj.start.tau;
    for i in traj.start.index..schedule.len() {
        end += schedule.phase(i).nominal_duration;
        if end < -1e-12 {
            continue;
        }
        match traj.index_of(end) {
            Some(k) => out.push((i, dcm_offset(traj.dcm[k], schedule.phase(i).landing_foot))),
            None => break,
        }
    }
    out
}

/// One-shot preview from the schedule's current phase.
pub fn preview_com(
    schedule: &GaitSchedule,
    initial: &RobotState,
    params: LipmParams,
    cfg: PreviewConfig,
) -> Result<ReferenceTrajectory> {
    let gen = PreviewGenerator::new(params, cfg)?;
    Ok(gen.generate(
        schedule,
        PhaseTime {
            index: schedule.current_index,
            tau: initial.time_in_phase,
        },
        &CartState::from(*initial),
    ))
}

/// Run the generator in receding-horizon fashion along the nominal timeline,
/// keeping the first sample of every window. Used for nominal references.
pub fn rollout(
    gen: &PreviewGenerator,
    schedule: &GaitSchedule,
    initial: &CartState,
    n_samples: usize,
) -> ReferenceTrajectory {
    let t = gen.cfg.sample_period;
    let mut state = *initial;
    let mut index = schedule.current_index;
    let mut tau = 0.0;
    let mut out = ReferenceTrajectory {
        sample_period: t,
        start: PhaseTime { index, tau },
        zmp: Vec::with_capacity(n_samples),
        com: Vec::with_capacity(n_samples),
        com_vel: Vec::with_capacity(n_samples),
        com_acc: Vec::with_capacity(n_samples),
        dcm: Vec::with_capacity(n_samples),
        offsets: Vec::new(),
    };
    for _ in 0..n_samples {
        let w = gen.generate(schedule, PhaseTime { index, tau }, &state);
        out.zmp.push(w.zmp[0]);
        out.com.push(w.com[0]);
        out.com_vel.push(w.com_vel[0]);
        out.com_acc.push(w.com_acc[0]);
        out.dcm.push(w.dcm[0]);
        state = w.state(1);
        tau += t;
        // Integer tick phase boundaries; tolerate rounding.
        while index + 1 < schedule.len() && tau >= schedule.phase(index).nominal_duration - 1e-9 {
            tau -= schedule.phase(index).nominal_duration;
            if tau.abs() < 1e-9 {
                tau = 0.0;
            }
            index += 1;
        }
    }
    out.offsets = reference_dcm_offset(schedule, &out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn in_place(n: usize) -> GaitSchedule {
        let plan = plan_footsteps(&WalkCommand {
            n_steps: n,
            ..Default::default()
        })
        .unwrap();
        build_schedule(&plan, 0.6, 0.3).unwrap()
    }

    #[test]
    fn in_place_footsteps() {
        let plan = plan_footsteps(&WalkCommand {
            step_length: 0.0,
            step_width: 0.2,
            n_steps: 4,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(plan.steps.len(), 4);
        for (k, s) in plan.steps.iter().enumerate() {
            assert_eq!(s.pos.x, 0.0);
            let expect = if k % 2 == 0 { -0.1 } else { 0.1 };
            assert_relative_eq!(s.pos.y, expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_footsteps() {
        let plan = plan_footsteps(&WalkCommand {
            step_length: 0.3,
            step_width: 0.2,
            n_steps: 2,
            ..Default::default()
        })
        .unwrap();
        assert_relative_eq!(plan.steps[0].pos.x, 0.3);
        assert_relative_eq!(plan.steps[0].pos.y, -0.1);
        assert_relative_eq!(plan.steps[1].pos.x, 0.6);
        assert_relative_eq!(plan.steps[1].pos.y, 0.1);
    }

    #[test]
    fn footstep_errors() {
        let bad = WalkCommand {
            step_width: 0.0,
            ..Default::default()
        };
        assert_eq!(plan_footsteps(&bad), Err(Error::NonPositiveWidth(0.0)));
        let one = plan_footsteps(&WalkCommand {
            n_steps: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(one.steps.len(), 1);
        let empty = FootstepPlan {
            start: Stance::default(),
            steps: vec![],
        };
        assert_eq!(build_schedule(&empty, 0.6, 0.3), Err(Error::EmptyFootsteps));
    }

    #[test]
    fn schedule_structure() {
        let s = in_place(2);
        let types: Vec<_> = s.phases().iter().map(|p| p.phase_type).collect();
        assert_eq!(
            types,
            vec![PhaseType::Ssp, PhaseType::Dsp, PhaseType::Ssp, PhaseType::Dsp]
        );
        for p in s.phases() {
            match p.phase_type {
                PhaseType::Ssp => {
                    assert_eq!(p.nominal_duration, 0.6);
                    assert_eq!(p.ref_zmp.start, p.support_foot);
                    assert_eq!(p.ref_zmp.end, p.support_foot);
                }
                PhaseType::Dsp => {
                    assert_eq!(p.nominal_duration, 0.3);
                    assert_eq!(p.ref_zmp.start, p.support_foot);
                    assert_eq!(p.ref_zmp.end, p.landing_foot);
                    assert_eq!(p.swing_side, SwingSide::None);
                }
            }
        }
        // DSP inherits the anchors of its SSP.
        assert_eq!(s.phase(1).support_foot, s.phase(0).support_foot);
        assert_eq!(s.phase(1).landing_foot, s.phase(0).landing_foot);
        // First SSP stands on the left foot while the right swings.
        assert_eq!(s.phase(0).swing_side, SwingSide::Right);
        assert_relative_eq!(s.phase(0).support_foot.y, 0.1);
    }

    #[test]
    fn reference_zmp_is_continuous() {
        let plan = plan_footsteps(&WalkCommand {
            step_length: 0.3,
            n_steps: 5,
            ..Default::default()
        })
        .unwrap();
        let s = build_schedule(&plan, 0.6, 0.3).unwrap();
        for w in s.phases().windows(2) {
            assert_eq!(w[0].ref_zmp.end, w[1].ref_zmp.start);
        }
    }

    #[test]
    fn padding_appends_in_place_steps() {
        let mut s = in_place(1);
        assert_eq!(s.len(), 2);
        s.current_index = 1;
        s.ensure_remaining(5).unwrap();
        assert!(s.len() >= 6);
        for w in s.phases().windows(2) {
            assert_ne!(w[0].phase_type, w[1].phase_type);
            assert_eq!(w[0].ref_zmp.end, w[1].ref_zmp.start);
        }
        let last = s.steps().last().unwrap();
        let prev_same = s.steps()[s.steps().len() - 3];
        assert_eq!(last.foot, prev_same.foot);
        assert_eq!(last.pos, prev_same.pos);
    }

    #[test]
    fn shifting_steps_moves_the_plan() {
        let mut s = in_place(4);
        s.shift_steps_from(1, Vec2::new(0.1, 0.0)).unwrap();
        assert_eq!(s.steps()[0].pos.x, 0.0);
        assert_relative_eq!(s.steps()[1].pos.x, 0.1);
        assert_relative_eq!(s.phase(2).landing_foot.x, 0.1);
        assert_eq!(s.phase(2).support_foot.x, 0.0);
        assert_relative_eq!(s.phase(4).support_foot.x, 0.1);
    }

    #[test]
    fn zmp_lookup_walks_phases() {
        let s = in_place(3);
        assert_eq!(s.zmp_at(0, 0.3), s.phase(0).support_foot);
        let mid_dsp = s.zmp_at(0, 0.75);
        assert_relative_eq!(mid_dsp.y, 0.0, epsilon = 1e-12);
        // Past the end the final ZMP is held.
        assert_eq!(s.zmp_at(0, 100.0), s.phases().last().unwrap().ref_zmp.end);
    }

    #[test]
    fn preview_stays_at_equilibrium() {
        let plan = FootstepPlan {
            start: Stance {
                left: Vec2::ZERO,
                right: Vec2::ZERO,
            },
            steps: vec![
                Footstep {
                    foot: Foot::Right,
                    pos: Vec2::ZERO,
                },
                Footstep {
                    foot: Foot::Left,
                    pos: Vec2::ZERO,
                },
            ],
        };
        let s = build_schedule(&plan, 0.6, 0.3).unwrap();
        let traj = preview_com(
            &s,
            &RobotState::at_rest(Vec2::ZERO),
            LipmParams::default(),
            PreviewConfig::default(),
        )
        .unwrap();
        assert!(traj.com.iter().all(|c| c.norm() < 1e-6));
        assert!(traj.offsets.iter().all(|(_, o)| o.value.norm() < 1e-6));
    }

    #[test]
    fn preview_rejects_bad_weights() {
        let cfg = PreviewConfig {
            jerk_weight: 0.0,
            ..Default::default()
        };
        assert!(PreviewGenerator::new(LipmParams::default(), cfg).is_err());
    }

    #[test]
    fn emitted_dcm_satisfies_definition() {
        let s = in_place(4);
        let gen = PreviewGenerator::new(LipmParams::default(), PreviewConfig::default()).unwrap();
        let w = gen.generate(
            &s,
            PhaseTime { index: 0, tau: 0.0 },
            &CartState::default(),
        );
        let b = LipmParams::default().time_constant();
        for k in 0..w.len() {
            let err = (w.dcm[k] - (w.com[k] + w.com_vel[k] * b)).norm();
            assert!(err <= 1e-10);
        }
        assert_eq!(w.len(), 161);
    }
}
