//! Linear inverted pendulum and divergent-component-of-motion (DCM) algebra.
//!
//! Everything here is a pure function over small `Copy` value types. The
//! horizontal plane uses x forward and y to the left.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Shortest admissible ZMP segment. `Z_alpha` / `Z_beta` divide by the duration.
pub const MIN_SEGMENT_DURATION: f64 = 1e-4;

/// A point or vector in the horizontal plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Linear blend `(1 - s) * self + s * other`.
    pub fn lerp(self, other: Vec2, s: f64) -> Vec2 {
        self * (1.0 - s) + other * s
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => panic!("Vec2 has two axes, got {axis}"),
        }
    }

    pub fn set(&mut self, axis: usize, value: f64) {
        match axis {
            0 => self.x = value,
            1 => self.y = value,
            _ => panic!("Vec2 has two axes, got {axis}"),
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, rhs: Vec2) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        rhs * self
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x / rhs, self.y / rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Point-mass model parameters. The time constant is derived and kept private
/// so it can never go stale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipmParams {
    com_height: f64,
    zmp_height: f64,
    gravity: f64,
    mass: f64,
    time_constant: f64,
}

impl LipmParams {
    pub fn new(com_height: f64, zmp_height: f64, gravity: f64, mass: f64) -> Result<Self> {
        let finite = [com_height, zmp_height, gravity, mass]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite value".into()));
        }
        if !(zmp_height >= 0.0 && com_height > zmp_height) {
            return Err(Error::InvalidParams(format!(
                "need com_height > zmp_height >= 0, got {com_height} and {zmp_height}"
            )));
        }
        if gravity <= 0.0 || mass <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "gravity and mass must be positive, got {gravity} and {mass}"
            )));
        }
        Ok(Self {
            com_height,
            zmp_height,
            gravity,
            mass,
            time_constant: ((com_height - zmp_height) / gravity).sqrt(),
        })
    }

    pub fn com_height(&self) -> f64 {
        self.com_height
    }

    pub fn zmp_height(&self) -> f64 {
        self.zmp_height
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// `b = sqrt((c_z - z_z) / g)`.
    pub fn time_constant(&self) -> f64 {
        self.time_constant
    }

    /// `g / (c_z - z_z)`, the squared natural frequency.
    pub fn omega_sq(&self) -> f64 {
        self.gravity / (self.com_height - self.zmp_height)
    }
}

impl Default for LipmParams {
    fn default() -> Self {
        Self::new(0.75, 0.0, 9.81, 100.0).expect("default parameters are valid")
    }
}

/// Horizontal CoM state plus the time elapsed in the current phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotState {
    pub com: Vec2,
    pub com_vel: Vec2,
    pub time_in_phase: f64,
}

impl RobotState {
    pub fn at_rest(com: Vec2) -> Self {
        Self {
            com,
            com_vel: Vec2::ZERO,
            time_in_phase: 0.0,
        }
    }
}

/// Linearly interpolated ZMP over one phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZmpSegment {
    pub start: Vec2,
    pub end: Vec2,
    duration: f64,
}

impl ZmpSegment {
    pub fn new(start: Vec2, end: Vec2, duration: f64) -> Result<Self> {
        if !(duration > MIN_SEGMENT_DURATION) || !duration.is_finite() {
            return Err(Error::DegenerateDuration(duration));
        }
        Ok(Self {
            start,
            end,
            duration,
        })
    }

    pub fn constant(point: Vec2, duration: f64) -> Result<Self> {
        Self::new(point, point, duration)
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// The same endpoints spread over a different duration.
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        Self::new(self.start, self.end, duration)
    }

    /// Interpolation that clamps `t` into the segment instead of failing.
    pub fn at_clamped(&self, t: f64) -> Vec2 {
        let s = (t / self.duration).clamp(0.0, 1.0);
        self.start.lerp(self.end, s)
    }
}

/// Gap between the DCM at the end of a phase and the step location.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DcmOffset {
    pub value: Vec2,
}

/// CoM acceleration of the pendulum for a given ZMP.
pub fn lipm_accel(state: &RobotState, zmp: Vec2, params: &LipmParams) -> Vec2 {
    (state.com - zmp) * params.omega_sq()
}

/// `xi = c + b * c_dot`.
pub fn dcm_of(state: &RobotState, params: &LipmParams) -> Vec2 {
    state.com + state.com_vel * params.time_constant()
}

/// Inverse of [`dcm_of`] for the velocity.
pub fn com_vel_from_dcm(dcm: Vec2, com: Vec2, params: &LipmParams) -> Vec2 {
    (dcm - com) / params.time_constant()
}

/// ZMP at time `t` of the segment.
pub fn zmp_interp(seg: &ZmpSegment, t: f64) -> Result<Vec2> {
    if !(0.0..=seg.duration).contains(&t) {
        return Err(Error::TimeOutOfRange {
            t,
            duration: seg.duration,
        });
    }
    let s = t / seg.duration;
    Ok(seg.start.lerp(seg.end, s))
}

/// `Z_alpha(T) = z_T + b/T (z_T - z_0)` evaluated at the segment's own duration.
pub fn z_alpha(seg: &ZmpSegment, params: &LipmParams) -> Vec2 {
    z_alpha_raw(seg.start, seg.end, seg.duration, params.time_constant())
}

/// `Z_beta(T, t) = z_0 + (t + b)/T (z_T - z_0)`.
pub fn z_beta(seg: &ZmpSegment, t: f64, params: &LipmParams) -> Vec2 {
    z_beta_raw(seg.start, seg.end, seg.duration, t, params.time_constant())
}

#[inline]
pub(crate) fn z_alpha_raw(z0: Vec2, zt: Vec2, duration: f64, b: f64) -> Vec2 {
    zt + (zt - z0) * (b / duration)
}

#[inline]
pub(crate) fn z_beta_raw(z0: Vec2, zt: Vec2, duration: f64, t: f64, b: f64) -> Vec2 {
    z0 + (zt - z0) * ((t + b) / duration)
}

/// Closed-form DCM at the end of the segment given its value at time `t`.
pub fn propagate_dcm(seg: &ZmpSegment, xi_t: Vec2, t: f64, params: &LipmParams) -> Vec2 {
    let b = params.time_constant();
    let growth = ((seg.duration - t) / b).exp();
    z_alpha(seg, params) + (xi_t - z_beta(seg, t, params)) * growth
}

/// Inverse of [`propagate_dcm`]: the DCM at time `t` that reaches `xi_end` at
/// the end of the segment. Valid for any `t`, including `t > T`.
pub fn dcm_at_time(seg: &ZmpSegment, xi_end: Vec2, t: f64, params: &LipmParams) -> Vec2 {
    let b = params.time_constant();
    let decay = ((t - seg.duration) / b).exp();
    z_beta(seg, t, params) + (xi_end - z_alpha(seg, params)) * decay
}

pub fn dcm_offset(xi_end: Vec2, landing: Vec2) -> DcmOffset {
    DcmOffset {
        value: xi_end - landing,
    }
}
