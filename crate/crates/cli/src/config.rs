use std::path::Path;

use phasewalk_core::gait::{Foot, PreviewConfig};
use phasewalk_core::nmpc::{ablation_config, Method, NmpcConfig, NmpcWeights};
use phasewalk_core::sim::{Disturbance, FallThresholds, GaitConfig, SimConfig};
use phasewalk_core::{LipmParams, Vec2};
use serde::Deserialize;

use crate::error::{CliError, Result};

/// Scenario file. Every key has a default except `name`; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub gait: GaitSection,
    #[serde(default)]
    pub nmpc: NmpcSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub disturbance: DisturbanceSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub com_height: f64,
    pub zmp_height: f64,
    pub gravity: f64,
    pub mass: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = LipmParams::default();
        Self {
            com_height: p.com_height(),
            zmp_height: p.zmp_height(),
            gravity: p.gravity(),
            mass: p.mass(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FootName {
    Left,
    Right,
}

impl From<FootName> for Foot {
    fn from(f: FootName) -> Self {
        match f {
            FootName::Left => Foot::Left,
            FootName::Right => Foot::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitSection {
    pub t_ssp: f64,
    pub t_dsp: f64,
    pub step_length: f64,
    pub step_width: f64,
    pub n_steps: usize,
    pub first_swing: FootName,
}

impl Default for GaitSection {
    fn default() -> Self {
        let g = GaitConfig::default();
        Self {
            t_ssp: g.t_ssp,
            t_dsp: g.t_dsp,
            step_length: g.step_length,
            step_width: g.step_width,
            n_steps: g.n_steps,
            first_swing: match g.first_swing {
                Foot::Left => FootName::Left,
                Foot::Right => FootName::Right,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum MethodName {
    M1,
    M2,
    M3,
    M4,
}

impl From<MethodName> for Method {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::M1 => Method::M1,
            MethodName::M2 => Method::M2,
            MethodName::M3 => Method::M3,
            MethodName::M4 => Method::M4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmpcSection {
    pub method: MethodName,
    pub n_phases: usize,
    pub zmp_lower: [f64; 2],
    pub zmp_upper: [f64; 2],
    pub step_bounds: [f64; 2],
    pub step_clearance: f64,
    pub ssp_duration_bounds: [f64; 2],
    pub dsp_duration_bounds: [f64; 2],
    pub dsp_min_duration: f64,
    pub min_remaining: f64,
    pub max_sqp_iters: usize,
    pub sqp_tolerance: f64,
    pub w_zmp_start: [f64; 2],
    pub w_zmp_end: [f64; 2],
    pub w_step: [f64; 2],
    pub w_dcm_offset: [f64; 2],
    pub w_duration: f64,
}

fn arr(v: Vec2) -> [f64; 2] {
    [v.x, v.y]
}

fn vec2(a: [f64; 2]) -> Vec2 {
    Vec2::new(a[0], a[1])
}

impl Default for NmpcSection {
    fn default() -> Self {
        let c = NmpcConfig::default();
        let w = c.weights;
        Self {
            method: MethodName::M1,
            n_phases: c.n_phases,
            zmp_lower: arr(c.zmp_ctrl_lower),
            zmp_upper: arr(c.zmp_ctrl_upper),
            step_bounds: arr(c.step_ctrl_bounds_ssp),
            step_clearance: c.step_clearance,
            ssp_duration_bounds: [c.duration_delta_bounds_ssp.0, c.duration_delta_bounds_ssp.1],
            dsp_duration_bounds: [c.duration_delta_bounds_dsp.0, c.duration_delta_bounds_dsp.1],
            dsp_min_duration: c.dsp_min_duration,
            min_remaining: c.min_remaining,
            max_sqp_iters: c.max_sqp_iters,
            sqp_tolerance: c.sqp_tolerance,
            w_zmp_start: arr(w.zmp_start),
            w_zmp_end: arr(w.zmp_end),
            w_step: arr(w.step),
            w_dcm_offset: arr(w.dcm_offset),
            w_duration: w.duration,
        }
    }
}

impl NmpcSection {
    /// Full-freedom controller settings, before any method restriction.
    pub fn base_config(&self) -> NmpcConfig {
        NmpcConfig {
            n_phases: self.n_phases,
            weights: NmpcWeights {
                zmp_start: vec2(self.w_zmp_start),
                zmp_end: vec2(self.w_zmp_end),
                step: vec2(self.w_step),
                dcm_offset: vec2(self.w_dcm_offset),
                duration: self.w_duration,
            },
            zmp_ctrl_lower: vec2(self.zmp_lower),
            zmp_ctrl_upper: vec2(self.zmp_upper),
            step_ctrl_bounds_ssp: vec2(self.step_bounds),
            step_clearance: self.step_clearance,
            duration_delta_bounds_ssp: (self.ssp_duration_bounds[0], self.ssp_duration_bounds[1]),
            duration_delta_bounds_dsp: (self.dsp_duration_bounds[0], self.dsp_duration_bounds[1]),
            dsp_min_duration: self.dsp_min_duration,
            min_remaining: self.min_remaining,
            max_sqp_iters: self.max_sqp_iters,
            sqp_tolerance: self.sqp_tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub duration: f64,
    pub physics_dt: f64,
    pub control_period: f64,
    pub fall_dcm_error: f64,
    pub fall_sustain: f64,
    pub fall_com_radius: f64,
    pub lift_height: f64,
    pub preview_horizon: usize,
    pub jerk_weight: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            duration: s.duration,
            physics_dt: s.physics_dt,
            control_period: s.control_period,
            fall_dcm_error: s.fall.dcm_error,
            fall_sustain: s.fall.sustain,
            fall_com_radius: s.fall.com_radius,
            lift_height: s.lift_height,
            preview_horizon: s.preview.horizon,
            jerk_weight: s.preview.jerk_weight,
        }
    }
}

/// A single push. Zero magnitude means no push.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceSection {
    /// Force magnitude, N.
    pub magnitude: f64,
    /// 90 is forward, 180 is left.
    pub direction_deg: f64,
    pub start_time: f64,
    pub duration: f64,
}

impl Default for DisturbanceSection {
    fn default() -> Self {
        Self {
            magnitude: 0.0,
            direction_deg: 90.0,
            start_time: 1.2,
            duration: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    Direction,
    Timing,
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub mode: SweepMode,
    pub methods: Vec<MethodName>,
    /// Push directions, degrees.
    pub directions: Vec<f64>,
    /// Push onsets within the step cycle, seconds.
    pub timings: Vec<f64>,
    /// Start of the step cycle the timing grid refers to.
    pub cycle_start: f64,
    /// Push onset for direction and magnitude sweeps.
    pub push_time: f64,
    /// Push direction for timing and magnitude sweeps.
    pub push_direction: f64,
    pub magnitude_step: f64,
    pub max_magnitude: f64,
    pub force_duration: f64,
    /// DCM error below which a trial counts as settled.
    pub settle_threshold: f64,
    /// How long the error must stay settled.
    pub settle_hold: f64,
    pub trial_duration: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            mode: SweepMode::Direction,
            methods: vec![MethodName::M1],
            directions: (0..12).map(|k| 30.0 * k as f64).collect(),
            timings: (0..9).map(|k| 0.1 * k as f64).collect(),
            cycle_start: 0.9,
            push_time: 1.2,
            push_direction: 90.0,
            magnitude_step: 10.0,
            max_magnitude: 3000.0,
            force_duration: 0.2,
            settle_threshold: 0.005,
            settle_hold: 0.5,
            trial_duration: 6.0,
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            CliError::Config {
                line,
                message: e.message().to_string(),
            }
        })?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        let bad = |message: String| {
            Err(CliError::Config {
                line: None,
                message,
            })
        };
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("invalid scenario name {:?}", self.name));
        }
        let s = &self.sweep;
        let cycle = self.gait.t_ssp + self.gait.t_dsp;
        if s.timings.iter().any(|&t| !(0.0..cycle).contains(&t)) {
            return bad(format!("timing grid must lie in [0, {cycle})"));
        }
        if !(s.magnitude_step > 0.0 && s.max_magnitude >= s.magnitude_step) {
            return bad("magnitude step must be positive and below the maximum".into());
        }
        if !(s.force_duration > 0.0) {
            return bad("force duration must be positive".into());
        }
        if s.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.disturbance.magnitude < 0.0 || !(self.disturbance.duration > 0.0) {
            return bad("disturbance magnitude must be non-negative and duration positive".into());
        }
        self.sim_config(self.nmpc.method.into(), &self.disturbances()?)
            .map_err(|e| CliError::Config {
                line: None,
                message: e.to_string(),
            })?;
        Ok(())
    }

    /// Simulator configuration for `method` with the given pushes.
    pub fn sim_config(&self, method: Method, disturbances: &[Disturbance]) -> Result<SimConfig> {
        let m = &self.model;
        let model = LipmParams::new(m.com_height, m.zmp_height, m.gravity, m.mass)?;
        let g = &self.gait;
        let s = &self.sim;
        let cfg = SimConfig {
            physics_dt: s.physics_dt,
            control_period: s.control_period,
            duration: s.duration,
            fall: FallThresholds {
                dcm_error: s.fall_dcm_error,
                sustain: s.fall_sustain,
                com_radius: s.fall_com_radius,
            },
            model,
            gait: GaitConfig {
                t_ssp: g.t_ssp,
                t_dsp: g.t_dsp,
                step_length: g.step_length,
                step_width: g.step_width,
                n_steps: g.n_steps,
                first_swing: g.first_swing.into(),
            },
            preview: PreviewConfig {
                sample_period: s.control_period,
                horizon: s.preview_horizon,
                jerk_weight: s.jerk_weight,
                ..PreviewConfig::default()
            },
            nmpc: ablation_config(method, &self.nmpc.base_config()),
            disturbances: disturbances.to_vec(),
            lift_height: s.lift_height,
            stop_on_fall: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configured push, if any.
    pub fn disturbances(&self) -> Result<Vec<Disturbance>> {
        let d = &self.disturbance;
        if d.magnitude == 0.0 {
            return Ok(Vec::new());
        }
        let push = Disturbance::directional(d.magnitude, d.direction_deg, d.start_time, d.duration)
            .map_err(|e| CliError::Config {
                line: None,
                message: e.to_string(),
            })?;
        Ok(vec![push])
    }

    pub fn methods(&self) -> Vec<Method> {
        self.sweep.methods.iter().map(|&m| m.into()).collect()
    }
}
