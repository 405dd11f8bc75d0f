//! Closed-loop point-mass simulator: the plant runs at the physics rate under
//! a zero-order-held desired ZMP and external forces, while the phase-based
//! NMPC replans ZMP modulation, footsteps and phase durations at the control
//! rate.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::gait::{
    plan_footsteps, CartState, Foot, GaitSchedule, PhaseTime, PhaseType, PreviewConfig,
    PreviewGenerator, ReferenceTrajectory, Stance, WalkCommand,
};
use crate::lipm::{dcm_of, lipm_accel, LipmParams, RobotState, Vec2};
use crate::nmpc::{self, DecisionBlock, NmpcConfig, NmpcSolution, PhasePreviewContext, StructureReport};

/// Constant external force on the CoM over `[start_time, start_time + duration)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    pub force: Vec2,
    pub start_time: f64,
    pub duration: f64,
}

impl Disturbance {
    pub fn new(force: Vec2, start_time: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "disturbance duration must be positive, got {duration}"
            )));
        }
        if !force.is_finite() || !start_time.is_finite() {
            return Err(Error::InvalidConfig("non-finite disturbance".into()));
        }
        Ok(Self {
            force,
            start_time,
            duration,
        })
    }

    /// Force of magnitude `magnitude` pushing along `angle_deg`, measured
    /// counter-clockwise from the -y axis so that 90 degrees pushes forward.
    pub fn directional(magnitude: f64, angle_deg: f64, start_time: f64, duration: f64) -> Result<Self> {
        let a = angle_deg.to_radians();
        Self::new(
            Vec2::new(a.sin(), -a.cos()) * magnitude,
            start_time,
            duration,
        )
    }

    /// `|F| * duration`, N s.
    pub fn impulse(&self) -> f64 {
        self.force.norm() * self.duration
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.start_time && t < self.end_time()
    }
}

/// Position, velocity and acceleration of a point in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Kinematic {
    pub pos: Vec2,
    pub vel: Vec2,
    pub acc: Vec2,
}

/// Fifth-order polynomial per axis from a start triple to a target at rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingTrajectory {
    coeffs: [[f64; 6]; 2],
    pub start_time: f64,
    pub end_time: f64,
    pub target: Vec2,
}

/// Quintic from `start` at `t0` to `target` with zero velocity and
/// acceleration at `t1`.
pub fn swing_quintic(start: Kinematic, target: Vec2, t0: f64, t1: f64) -> Result<SwingTrajectory> {
    let d = t1 - t0;
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::DegenerateDuration(d));
    }
    let mut coeffs = [[0.0; 6]; 2];
    for (axis, c) in coeffs.iter_mut().enumerate() {
        let p0 = start.pos.get(axis);
        let v0 = start.vel.get(axis);
        let a0 = start.acc.get(axis);
        let dp = target.get(axis) - p0;
        c[0] = p0;
        c[1] = v0;
        c[2] = 0.5 * a0;
        c[3] = (20.0 * dp - 12.0 * v0 * d - 3.0 * a0 * d * d) / (2.0 * d.powi(3));
        c[4] = (-30.0 * dp + 16.0 * v0 * d + 3.0 * a0 * d * d) / (2.0 * d.powi(4));
        c[5] = (12.0 * dp - 6.0 * v0 * d - a0 * d * d) / (2.0 * d.powi(5));
    }
    Ok(SwingTrajectory {
        coeffs,
        start_time: t0,
        end_time: t1,
        target,
    })
}

impl SwingTrajectory {
    /// A foot resting at `pos`.
    pub fn resting(pos: Vec2, t: f64) -> Self {
        Self {
            coeffs: [[pos.x, 0.0, 0.0, 0.0, 0.0, 0.0], [pos.y, 0.0, 0.0, 0.0, 0.0, 0.0]],
            start_time: t,
            end_time: t,
            target: pos,
        }
    }

    /// State at `t`; the target is held after `end_time`.
    pub fn eval(&self, t: f64) -> Kinematic {
        if t >= self.end_time {
            return Kinematic {
                pos: self.target,
                ..Default::default()
            };
        }
        let s = (t - self.start_time).max(0.0);
        let mut out = Kinematic::default();
        for (axis, c) in self.coeffs.iter().enumerate() {
            let p = c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))));
            let v = c[1] + s * (2.0 * c[2] + s * (3.0 * c[3] + s * (4.0 * c[4] + s * 5.0 * c[5])));
            let a = 2.0 * c[2] + s * (6.0 * c[3] + s * (12.0 * c[4] + s * 20.0 * c[5]));
            out.pos.set(axis, p);
            out.vel.set(axis, v);
            out.acc.set(axis, a);
        }
        out
    }
}

/// Swing foot height for plots: a smooth bump over the nominal swing window.
pub fn lift_height(t: f64, t0: f64, t1: f64, peak: f64) -> f64 {
    if t1 <= t0 {
        return 0.0;
    }
    let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    16.0 * peak * s * s * (1.0 - s) * (1.0 - s)
}

/// Semi-implicit Euler step of the pendulum with an external force on the CoM.
pub fn physics_step(state: &RobotState, zmp_des: Vec2, ext_force: Vec2, params: &LipmParams, dt: f64) -> RobotState {
    let acc = lipm_accel(state, zmp_des, params) + ext_force / params.mass();
    let com_vel = state.com_vel + acc * dt;
    RobotState {
        com: state.com + com_vel * dt,
        com_vel,
        time_in_phase: state.time_in_phase + dt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FallThresholds {
    /// DCM error norm that counts as diverging.
    pub dcm_error: f64,
    /// How long the DCM error must stay above the threshold.
    pub sustain: f64,
    /// Largest CoM distance from the nearest contact.
    pub com_radius: f64,
}

impl Default for FallThresholds {
    fn default() -> Self {
        Self {
            dcm_error: 0.5,
            sustain: 0.2,
            com_radius: 1.0,
        }
    }
}

/// Tracks how long the DCM error has exceeded its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FallDetector {
    exceeded_since: Option<f64>,
}

impl FallDetector {
    /// Update with the state at `time` and report whether the robot fell.
    pub fn step(&mut self, time: f64, dcm_err: Vec2, com: Vec2, contacts: &[Vec2], th: &FallThresholds) -> bool {
        if dcm_err.norm() > th.dcm_error {
            let since = *self.exceeded_since.get_or_insert(time);
            if time - since >= th.sustain - 1e-9 {
                return true;
            }
        } else {
            self.exceeded_since = None;
        }
        let nearest = contacts
            .iter()
            .map(|&c| (com - c).norm())
            .fold(f64::INFINITY, f64::min);
        nearest > th.com_radius
    }
}

/// Instantaneous fall test on a single sample: CoM too far from support.
pub fn detect_fall(state: &RobotState, schedule: &GaitSchedule, thresholds: &FallThresholds) -> bool {
    let contacts = schedule.contacts(schedule.current_index);
    contacts
        .iter()
        .all(|&c| (state.com - c).norm() > thresholds.com_radius)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitConfig {
    pub t_ssp: f64,
    pub t_dsp: f64,
    pub step_length: f64,
    pub step_width: f64,
    /// Planned steps; the schedule is padded with in-place steps afterward.
    pub n_steps: usize,
    pub first_swing: Foot,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self {
            t_ssp: 0.6,
            t_dsp: 0.3,
            step_length: 0.0,
            step_width: 0.2,
            n_steps: 4,
            first_swing: Foot::Right,
        }
    }
}

impl GaitConfig {
    pub fn cycle(&self) -> f64 {
        self.t_ssp + self.t_dsp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub physics_dt: f64,
    pub control_period: f64,
    pub duration: f64,
    pub fall: FallThresholds,
    pub model: LipmParams,
    pub gait: GaitConfig,
    pub preview: PreviewConfig,
    pub nmpc: NmpcConfig,
    pub disturbances: Vec<Disturbance>,
    pub lift_height: f64,
    /// End the run at the first fall.
    pub stop_on_fall: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            physics_dt: 0.0005,
            control_period: 0.01,
            duration: 10.0,
            fall: FallThresholds::default(),
            model: LipmParams::default(),
            gait: GaitConfig::default(),
            preview: PreviewConfig::default(),
            nmpc: NmpcConfig::default(),
            disturbances: Vec::new(),
            lift_height: 0.05,
            stop_on_fall: true,
        }
    }
}

impl SimConfig {
    pub fn substeps(&self) -> usize {
        (self.control_period / self.physics_dt).round() as usize
    }

    pub fn n_ticks(&self) -> usize {
        (self.duration / self.control_period).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.physics_dt > 0.0 && self.control_period > 0.0 && self.duration > 0.0) {
            return bad("time steps and duration must be positive".into());
        }
        let k = self.control_period / self.physics_dt;
        if (k - k.round()).abs() > 1e-9 * k || k.round() < 1.0 {
            return bad(format!(
                "control period {} is not a multiple of the physics step {}",
                self.control_period, self.physics_dt
            ));
        }
        if (self.preview.sample_period - self.control_period).abs() > 1e-12 {
            return bad("preview sample period must equal the control period".into());
        }
        let ticks = |t: f64| {
            let k = t / self.control_period;
            (k - k.round()).abs() <= 1e-9 * k.max(1.0)
        };
        if !(ticks(self.gait.t_ssp) && ticks(self.gait.t_dsp)) {
            return bad("phase durations must be multiples of the control period".into());
        }
        if self.gait.n_steps == 0 {
            return bad("at least one step is required".into());
        }
        let preview_span = self.preview.horizon as f64 * self.preview.sample_period;
        let longest = self.gait.t_ssp.max(self.gait.t_dsp);
        if preview_span < longest * (self.nmpc.n_phases - 1) as f64 {
            return bad("preview window is shorter than the NMPC preview".into());
        }
        if !(self.fall.dcm_error > 0.0 && self.fall.sustain >= 0.0 && self.fall.com_radius > 0.0) {
            return bad("fall thresholds must be positive".into());
        }
        self.nmpc.validate()
    }
}

/// One row per control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub time: f64,
    pub com: Vec2,
    pub com_vel: Vec2,
    pub dcm: Vec2,
    pub dcm_ref: Vec2,
    pub dcm_err: Vec2,
    pub zmp_ref: Vec2,
    pub zmp_ctrl: Vec2,
    pub zmp_des: Vec2,
    pub phase_index: usize,
    pub phase_type: PhaseType,
    pub time_in_phase: f64,
    pub t_new: f64,
    pub swing_target: Vec2,
    pub swing_pos: Vec2,
    pub swing_lift: f64,
    pub disturbance_active: bool,
    pub sqp_iterations: usize,
    pub sqp_step_norm: f64,
    pub converged: bool,
    /// Duration change of every previewed phase.
    pub duration_delta: f64,
    pub step_ctrl: Vec2,
    pub structure: StructureReport,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    PhaseTransition {
        time: f64,
        from: usize,
        to: usize,
        duration: f64,
    },
    FootstepUpdate {
        time: f64,
        step_index: usize,
        pos: Vec2,
    },
    Landing {
        time: f64,
        step_index: usize,
        pos: Vec2,
    },
    NmpcFailure {
        time: f64,
        message: String,
    },
    Fall {
        time: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub rows: Vec<LogRow>,
    pub events: Vec<Event>,
    /// Wall-clock NMPC time per tick, seconds. Not part of the
    /// deterministic record.
    pub solve_times: Vec<f64>,
}

impl SimLog {
    pub fn fell(&self) -> bool {
        self.fall_time().is_some()
    }

    pub fn fall_time(&self) -> Option<f64> {
        self.events.iter().find_map(|e| match e {
            Event::Fall { time } => Some(*time),
            _ => None,
        })
    }

    pub fn nmpc_failures(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::NmpcFailure { .. }))
            .count()
    }

    /// First time after `after` from which the DCM error stays below
    /// `threshold` until the end of the log.
    pub fn settle_time(&self, after: f64, threshold: f64) -> Option<f64> {
        let mut settled = None;
        for r in self.rows.iter().filter(|r| r.time >= after) {
            if r.dcm_err.norm() < threshold {
                settled.get_or_insert(r.time);
            } else {
                settled = None;
            }
        }
        settled
    }
}

/// Controller output held between two ticks. The desired ZMP is evaluated
/// from it at the physics rate.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Held {
    block: DecisionBlock,
    ref_start: Vec2,
    ref_end: Vec2,
    t_new: f64,
    /// Phase time at the tick.
    t_tick: f64,
    /// Generator tracking residual at this tick and the next.
    residual: (Vec2, Vec2),
}

impl Held {
    fn zmp(&self, dt: f64, frac: f64) -> (Vec2, Vec2) {
        let s = ((self.t_tick + dt) / self.t_new).clamp(0.0, 1.0);
        let ctrl = self.block.zmp_start_ctrl.lerp(self.block.zmp_end_ctrl, s);
        let reference = self.ref_start.lerp(self.ref_end, s) + self.residual.0.lerp(self.residual.1, frac);
        (reference, ctrl)
    }
}

/// A complete closed-loop world: plant, schedule, reference generator and
/// controller state.
#[derive(Debug, Clone)]
pub struct World {
    cfg: SimConfig,
    gen: PreviewGenerator,
    pub schedule: GaitSchedule,
    pub state: RobotState,
    pub time: f64,
    tick: usize,
    ticks_in_phase: usize,
    phase_start_time: f64,
    /// Generator state at nominal phase time `min(t, T)`.
    gen_state: CartState,
    last_window: Option<ReferenceTrajectory>,
    warm: Option<NmpcSolution>,
    t_new: f64,
    held: Held,
    swing: SwingTrajectory,
    swing_window: (f64, f64),
    swing_target: Vec2,
    pin_next: Option<Vec2>,
    fall: FallDetector,
    fallen: bool,
    pub log: SimLog,
}

impl World {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let g = cfg.gait;
        let plan = plan_footsteps(&WalkCommand {
            step_length: g.step_length,
            step_width: g.step_width,
            n_steps: g.n_steps,
            start_stance: Stance {
                left: Vec2::new(0.0, 0.5 * g.step_width),
                right: Vec2::new(0.0, -0.5 * g.step_width),
            },
            first_swing: g.first_swing,
        })?;
        let mut schedule = GaitSchedule::new(&plan, g.t_ssp, g.t_dsp)?;
        schedule.ensure_remaining(cfg.nmpc.n_phases + 2)?;
        let gen = PreviewGenerator::new(cfg.model, cfg.preview)?;
        let start = plan.start.midpoint();
        let first = *schedule.current();
        let swing_from = schedule
            .swing_info(0)
            .map(|s| s.lift_off)
            .unwrap_or(first.landing_foot);
        Ok(Self {
            gen,
            state: RobotState::at_rest(start),
            time: 0.0,
            tick: 0,
            ticks_in_phase: 0,
            phase_start_time: 0.0,
            gen_state: CartState {
                com: start,
                ..Default::default()
            },
            last_window: None,
            warm: None,
            t_new: first.nominal_duration,
            held: Held {
                block: DecisionBlock::default(),
                ref_start: first.ref_zmp.start,
                ref_end: first.ref_zmp.end,
                t_new: first.nominal_duration,
                t_tick: 0.0,
                residual: (Vec2::ZERO, Vec2::ZERO),
            },
            swing: SwingTrajectory::resting(swing_from, 0.0),
            swing_window: (0.0, first.nominal_duration),
            swing_target: first.landing_foot,
            pin_next: Some(Vec2::ZERO),
            fall: FallDetector::default(),
            fallen: false,
            log: SimLog::default(),
            schedule,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn has_fallen(&self) -> bool {
        self.fallen
    }

    /// Swap the controller settings mid-run, keeping plant, schedule and
    /// warm start.
    pub fn set_nmpc_config(&mut self, nmpc: NmpcConfig) -> Result<()> {
        nmpc.validate()?;
        self.cfg.nmpc = nmpc;
        Ok(())
    }

    /// Step until `time` reaches `t_end` or the run stops.
    pub fn run_until(&mut self, t_end: f64) -> Result<()> {
        while self.time < t_end - 1e-9 {
            if !self.step()? {
                break;
            }
        }
        Ok(())
    }

    /// Desired ZMP applied `dt` seconds into the current control period.
    pub fn desired_zmp(&self, dt: f64) -> Vec2 {
        let frac = (dt / self.cfg.control_period).clamp(0.0, 1.0);
        let (reference, ctrl) = self.held.zmp(dt, frac);
        reference + ctrl
    }

    fn time_in_phase(&self) -> f64 {
        self.ticks_in_phase as f64 * self.cfg.control_period
    }

    /// Advance the phase when the optimized duration has elapsed.
    pub fn phase_machine_step(&mut self) -> Result<Option<Event>> {
        let t = self.time_in_phase();
        // Durations are realized on the control grid.
        if t < self.t_new - 0.5 * self.cfg.control_period {
            return Ok(None);
        }
        let from = self.schedule.current_index;
        let ph = *self.schedule.current();

        // Generator state at the nominal end of the finished phase.
        if t < ph.nominal_duration - 1e-9 {
            if let Some(w) = &self.last_window {
                let tau_w = w.start.tau;
                if let Some(k) = w.index_of(ph.nominal_duration - tau_w) {
                    self.gen_state = w.state(k);
                }
            }
        }
        if ph.phase_type == PhaseType::Ssp {
            let offset = self.swing_target - ph.landing_foot;
            self.schedule.shift_steps_from(ph.step_index, offset)?;
            self.gen_state = self.gen_state.translated(offset);
            self.log.events.push(Event::Landing {
                time: self.time,
                step_index: ph.step_index,
                pos: self.swing_target,
            });
        }
        self.schedule.advance();
        self.schedule.ensure_remaining(self.cfg.nmpc.n_phases + 2)?;
        self.ticks_in_phase = 0;
        self.phase_start_time = self.time;
        self.state.time_in_phase = 0.0;
        let next = *self.schedule.current();
        self.t_new = next.nominal_duration;
        self.warm = self.warm.as_ref().map(|w| w.shifted());
        self.pin_next = Some(self.held.block.zmp_end_ctrl);
        if let Some(info) = self.schedule.swing_info(self.schedule.current_index) {
            self.swing = SwingTrajectory::resting(info.lift_off, self.time);
            self.swing_window = (self.time, self.time + next.nominal_duration);
        } else {
            self.swing_window = (self.time, self.time);
        }
        self.swing_target = next.landing_foot;
        let ev = Event::PhaseTransition {
            time: self.time,
            from,
            to: self.schedule.current_index,
            duration: t,
        };
        self.log.events.push(ev.clone());
        Ok(Some(ev))
    }

    /// Regenerate references, solve the NMPC and set the held controls.
    pub fn control_tick(&mut self) -> Result<LogRow> {
        let cfg = &self.cfg;
        let b = cfg.model.time_constant();
        let t = self.time_in_phase();
        let index = self.schedule.current_index;
        let ph = *self.schedule.current();
        let tau = t.min(ph.nominal_duration);
        let window = self
            .gen
            .generate(&self.schedule, PhaseTime { index, tau }, &self.gen_state);
        let mut ctx = PhasePreviewContext::build(&self.schedule, &window, t, cfg.nmpc.n_phases, b)?;
        ctx.pinned_zmp_start = self.pin_next;
        let dcm = dcm_of(&self.state, &cfg.model);
        let dcm_ref = ctx.phases[0].dcm_ref;
        let dcm_err = dcm - dcm_ref;

        let clock = Instant::now();
        let result = nmpc::solve(dcm_err, &ctx, &cfg.nmpc, self.warm.as_ref());
        let elapsed = clock.elapsed().as_secs_f64();
        let (block, iterations, step_norm, converged, structure, duration_delta) = match result {
            Ok(sol) => {
                let report = nmpc::check_solution(&ctx, &cfg.nmpc, &sol.blocks);
                let blk = sol.blocks[0];
                let out = (blk, sol.iterations, sol.step_norm, sol.converged, report, blk.duration_delta);
                self.warm = Some(sol);
                self.pin_next = None;
                out
            }
            Err(e) => {
                self.log.events.push(Event::NmpcFailure {
                    time: self.time,
                    message: e.to_string(),
                });
                // Fall back on the last prediction for this phase, kept alive.
                let mut blk = self
                    .warm
                    .as_ref()
                    .map_or(self.held.block, |w| w.blocks[0]);
                let (lo, hi) = cfg.nmpc.duration_bounds(ph.phase_type, ph.nominal_duration);
                let floor = lo.max(t - ph.nominal_duration + cfg.nmpc.min_remaining);
                blk.duration_delta = blk.duration_delta.clamp(floor.min(hi), hi).max(floor);
                let report = StructureReport {
                    duration_margin: ph.nominal_duration + blk.duration_delta - t,
                    ..Default::default()
                };
                (blk, 0, f64::NAN, false, report, blk.duration_delta)
            }
        };
        self.log.solve_times.push(elapsed);

        let t_new = ph.nominal_duration + block.duration_delta;
        self.t_new = t_new;
        // The generator tracks the reference ZMP only approximately; the
        // plant follows the generator's own ZMP so that nominal walking
        // needs no control.
        let implied = window.implied_zmp(&cfg.model);
        let advance = tau + cfg.control_period <= ph.nominal_duration + 1e-9;
        // Start from where the previous tick's residual ended so the applied
        // ZMP has no jumps.
        let residual0 = if self.tick == 0 {
            implied[0] - ph.ref_zmp.at_clamped(tau)
        } else {
            self.held.residual.1
        };
        let residual1 = if advance {
            implied[1] - ph.ref_zmp.at_clamped(tau + cfg.control_period)
        } else {
            residual0
        };
        // The phase ends on the control grid; interpolate over that duration
        // so the ZMP reaches its end point exactly at the switch.
        let t_realized = ((t_new / cfg.control_period).round() * cfg.control_period)
            .max(t + cfg.control_period);
        self.held = Held {
            block,
            ref_start: ph.ref_zmp.start,
            ref_end: ph.ref_zmp.end,
            t_new: t_realized,
            t_tick: t,
            residual: (residual0, residual1),
        };
        let (zmp_ref, zmp_ctrl) = self.held.zmp(0.0, 0.0);
        let zmp_des = zmp_ref + zmp_ctrl;

        if ph.phase_type == PhaseType::Ssp {
            let target = ph.landing_foot + block.step_ctrl;
            if (target - self.swing_target).norm() > 1e-12 {
                self.log.events.push(Event::FootstepUpdate {
                    time: self.time,
                    step_index: ph.step_index,
                    pos: target,
                });
            }
            let now = self.swing.eval(self.time);
            self.swing = swing_quintic(now, target, self.time, self.phase_start_time + t_new)?;
            self.swing_target = target;
        }

        // Advance the generator along nominal time.
        if advance {
            self.gen_state = window.state(1);
        }
        self.last_window = Some(window);

        let swing = self.swing.eval(self.time);
        let lift = if ph.phase_type == PhaseType::Ssp {
            lift_height(self.time, self.swing_window.0, self.swing_window.1, cfg.lift_height)
        } else {
            0.0
        };
        let row = LogRow {
            time: self.time,
            com: self.state.com,
            com_vel: self.state.com_vel,
            dcm,
            dcm_ref,
            dcm_err,
            zmp_ref,
            zmp_ctrl,
            zmp_des,
            phase_index: index,
            phase_type: ph.phase_type,
            time_in_phase: t,
            t_new,
            swing_target: self.swing_target,
            swing_pos: swing.pos,
            swing_lift: lift,
            disturbance_active: cfg.disturbances.iter().any(|d| d.is_active(self.time)),
            sqp_iterations: iterations,
            sqp_step_norm: step_norm,
            converged,
            duration_delta,
            step_ctrl: block.step_ctrl,
            structure,
        };
        Ok(row)
    }

    /// Integrate the plant over one control period with the held ZMP.
    fn integrate(&mut self) {
        let dt = self.cfg.physics_dt;
        let n = self.cfg.substeps();
        for k in 0..n {
            let t = self.tick as f64 * self.cfg.control_period + k as f64 * dt;
            let force = self
                .cfg
                .disturbances
                .iter()
                .filter(|d| d.is_active(t))
                .fold(Vec2::ZERO, |acc, d| acc + d.force);
            let (zmp_ref, zmp_ctrl) = self.held.zmp(k as f64 * dt, k as f64 / n as f64);
            self.state = physics_step(&self.state, zmp_ref + zmp_ctrl, force, &self.cfg.model, dt);
        }
        self.tick += 1;
        self.ticks_in_phase += 1;
        self.time = self.tick as f64 * self.cfg.control_period;
        self.state.time_in_phase = self.time_in_phase();
    }

    /// One full control period: phase machine, controller, fall check and
    /// plant integration. Returns `false` once the run is over.
    pub fn step(&mut self) -> Result<bool> {
        if self.fallen && self.cfg.stop_on_fall {
            return Ok(false);
        }
        self.phase_machine_step()?;
        let row = self.control_tick()?;
        let contacts = self.schedule.contacts(self.schedule.current_index);
        if !self.fallen && self.fall.step(self.time, row.dcm_err, row.com, &contacts, &self.cfg.fall) {
            self.fallen = true;
            self.log.events.push(Event::Fall { time: self.time });
        }
        self.log.rows.push(row);
        if self.fallen && self.cfg.stop_on_fall {
            return Ok(false);
        }
        self.integrate();
        Ok(true)
    }

    pub fn into_log(self) -> SimLog {
        self.log
    }
}

/// Run the configured scenario to its end (or the first fall).
pub fn run_scenario(cfg: &SimConfig) -> Result<SimLog> {
    let n = cfg.n_ticks();
    let mut world = World::new(cfg.clone())?;
    for _ in 0..n {
        if !world.step()? {
            break;
        }
    }
    Ok(world.into_log())
}

/// Outcome of a push-recovery trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub recovered: bool,
    pub end_time: f64,
}

/// Run until a fall, the scenario end, or until the DCM error has stayed below
/// `settle_threshold` for `settle_hold` seconds after the last disturbance.
pub fn run_trial(cfg: &SimConfig, settle_threshold: f64, settle_hold: f64) -> Result<TrialOutcome> {
    let mut c = cfg.clone();
    c.stop_on_fall = true;
    let last_push = c
        .disturbances
        .iter()
        .map(|d| d.end_time())
        .fold(0.0f64, f64::max);
    let n = c.n_ticks();
    let mut world = World::new(c)?;
    let mut calm_since: Option<f64> = None;
    for _ in 0..n {
        if !world.step()? {
            break;
        }
        let row = world.log.rows.last().expect("a row per step");
        if row.time >= last_push && row.dcm_err.norm() < settle_threshold {
            let since = *calm_since.get_or_insert(row.time);
            if row.time - since >= settle_hold {
                break;
            }
        } else {
            calm_since = None;
        }
    }
    Ok(TrialOutcome {
        recovered: !world.has_fallen(),
        end_time: world.time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn equilibrium_is_fixed() {
        let p = LipmParams::default();
        let s = RobotState::at_rest(Vec2::new(0.1, -0.2));
        let n = physics_step(&s, s.com, Vec2::ZERO, &p, 0.0005);
        assert_eq!(n.com, s.com);
        assert_eq!(n.com_vel, Vec2::ZERO);
    }

    #[test]
    fn impulse_changes_velocity_by_impulse_over_mass() {
        let p = LipmParams::default();
        let mut s = RobotState::at_rest(Vec2::ZERO);
        let d = Disturbance::new(Vec2::new(440.0, 0.0), 0.0, 0.2).unwrap();
        let dt = 0.0005;
        for k in 0..400 {
            let f = if d.is_active(k as f64 * dt) { d.force } else { Vec2::ZERO };
            // Hold the CoM over the ZMP so gravity does no work.
            s = physics_step(&s, s.com, f, &p, dt);
        }
        assert_relative_eq!(s.com_vel.x, 0.88, epsilon = 1e-9);
        assert_relative_eq!(d.impulse(), 88.0, epsilon = 1e-12);
    }

    #[test]
    fn directional_convention() {
        let fwd = Disturbance::directional(10.0, 90.0, 0.0, 0.1).unwrap();
        assert_relative_eq!(fwd.force.x, 10.0, epsilon = 1e-12);
        assert!(fwd.force.y.abs() < 1e-12);
        let right = Disturbance::directional(10.0, 0.0, 0.0, 0.1).unwrap();
        assert_relative_eq!(right.force.y, -10.0, epsilon = 1e-12);
        assert!(Disturbance::new(Vec2::ZERO, 0.0, 0.0).is_err());
    }

    #[test]
    fn quintic_boundaries() {
        let start = Kinematic {
            pos: Vec2::new(0.1, -0.1),
            vel: Vec2::new(0.3, 0.2),
            acc: Vec2::new(-1.0, 2.0),
        };
        let target = Vec2::new(0.4, -0.05);
        let q = swing_quintic(start, target, 1.0, 1.5).unwrap();
        let a = q.eval(1.0);
        assert!((a.pos - start.pos).norm() < 1e-12);
        assert!((a.vel - start.vel).norm() < 1e-12);
        assert!((a.acc - start.acc).norm() < 1e-12);
        let s: f64 = 0.5 - 1e-12;
        let coeffs_end = {
            let mut k = Kinematic::default();
            for axis in 0..2 {
                let c = q.coeffs[axis];
                k.pos.set(axis, c.iter().enumerate().map(|(i, ci)| ci * s.powi(i as i32)).sum());
                k.vel.set(axis, (1..6).map(|i| i as f64 * c[i] * s.powi(i as i32 - 1)).sum());
                k.acc.set(axis, (2..6).map(|i| (i * (i - 1)) as f64 * c[i] * s.powi(i as i32 - 2)).sum());
            }
            k
        };
        assert!((coeffs_end.pos - target).norm() < 1e-10);
        assert!(coeffs_end.vel.norm() < 1e-10);
        assert!(coeffs_end.acc.norm() < 1e-9);
        assert!(swing_quintic(start, target, 1.0, 1.0).is_err());
    }

    #[test]
    fn quintic_fixed_point() {
        let p = Vec2::new(0.2, 0.1);
        let q = swing_quintic(Kinematic { pos: p, ..Default::default() }, p, 0.0, 0.6).unwrap();
        for k in 0..=60 {
            assert!((q.eval(k as f64 * 0.01).pos - p).norm() < 1e-15);
        }
    }

    #[test]
    fn fall_detector_needs_sustained_error() {
        let th = FallThresholds::default();
        let mut d = FallDetector::default();
        let contacts = [Vec2::ZERO];
        let big = Vec2::new(0.6, 0.0);
        assert!(!d.step(0.0, big, Vec2::ZERO, &contacts, &th));
        assert!(!d.step(0.1, big, Vec2::ZERO, &contacts, &th));
        assert!(!d.step(0.15, Vec2::ZERO, Vec2::ZERO, &contacts, &th));
        assert!(!d.step(0.2, big, Vec2::ZERO, &contacts, &th));
        assert!(d.step(0.4, big, Vec2::ZERO, &contacts, &th));
        let mut d = FallDetector::default();
        assert!(d.step(0.0, Vec2::ZERO, Vec2::new(1.5, 0.0), &contacts, &th));
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let c = SimConfig {
            physics_dt: 0.003,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.gait.t_ssp = 0.605;
        assert!(c.validate().is_err());
    }
}
