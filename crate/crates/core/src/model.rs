//! Robot state types, unicycle kinematics and the single-integrator mapping.
//!
//! Every robot is a differential-drive unicycle whose pose `(x1, x2, x3)` is
//! the midpoint of the wheel axis and its heading. Safety filtering and the
//! user-facing controllers work on planar velocities of a point a fixed
//! `lookahead` distance in front of the axis; [`si_to_uni`] and
//! [`uni_to_si`] convert between the two command spaces.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tracking-camera update period, the default integration step.
pub const DEFAULT_DT: f64 = 1.0 / 30.0;
/// Maximum linear speed of a robot (m/s).
pub const DEFAULT_V_MAX: f64 = 0.1;
/// Distance of the controlled point ahead of the wheel axis (m).
pub const DEFAULT_LOOKAHEAD: f64 = 0.05;
/// Robot mass (kg).
pub const DEFAULT_MASS: f64 = 0.06;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("expected {expected} commands, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Planar vector in meters or meters per second.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_inf(self) -> f64 {
        self.x.abs().max(self.y.abs())
    }

    /// Counter-clockwise quarter turn.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
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

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self * rhs.x, self * rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Pose of the wheel-axis midpoint: position in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotPose {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl RobotPose {
    pub fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self {
            x1,
            x2,
            x3: normalize_angle(x3),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x1, self.x2)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.x3)
    }

    /// Position of the point `lookahead` meters ahead of the wheel axis.
    pub fn lookahead_point(&self, lookahead: f64) -> Vec2 {
        self.position() + lookahead * self.heading()
    }

    /// Pose whose look-ahead point sits at `point` with heading `theta`.
    pub fn from_lookahead_point(point: Vec2, theta: f64, lookahead: f64) -> Self {
        let p = point - lookahead * Vec2::from_angle(theta);
        RobotPose::new(p.x, p.y, theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }
}

/// Poses of the whole team at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub poses: Vec<RobotPose>,
    pub time: f64,
}

impl SwarmState {
    pub fn new(poses: Vec<RobotPose>) -> Self {
        Self { poses, time: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Wheel-axis positions.
    pub fn positions(&self) -> Vec<Vec2> {
        self.poses.iter().map(RobotPose::position).collect()
    }

    /// Look-ahead points, the positions the safety filter reasons about.
    pub fn lookahead_points(&self, lookahead: f64) -> Vec<Vec2> {
        self.poses
            .iter()
            .map(|p| p.lookahead_point(lookahead))
            .collect()
    }
}

/// Planar single-integrator velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SiCommand {
    pub ux: f64,
    pub uy: f64,
}

impl SiCommand {
    pub const ZERO: SiCommand = SiCommand { ux: 0.0, uy: 0.0 };

    pub const fn new(ux: f64, uy: f64) -> Self {
        Self { ux, uy }
    }

    pub fn as_vec(self) -> Vec2 {
        Vec2::new(self.ux, self.uy)
    }

    pub fn from_vec(v: Vec2) -> Self {
        Self::new(v.x, v.y)
    }

    /// Scale down uniformly so that `max(|ux|, |uy|) <= bound`.
    pub fn saturate(self, bound: f64) -> Self {
        let m = self.as_vec().norm_inf();
        if m > bound && m > 0.0 {
            let s = bound / m;
            let mut out = SiCommand::new(self.ux * s, self.uy * s);
            // keep the dominant axis exactly on the bound
            if self.ux.abs() == m {
                out.ux = bound.copysign(self.ux);
            }
            if self.uy.abs() == m {
                out.uy = bound.copysign(self.uy);
            }
            out
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.ux.is_finite() && self.uy.is_finite()
    }
}

/// Unicycle command: linear speed (m/s) and turn rate (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UnicycleCommand {
    pub v: f64,
    pub w: f64,
}

impl UnicycleCommand {
    pub const ZERO: UnicycleCommand = UnicycleCommand { v: 0.0, w: 0.0 };

    pub const fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    pub fn saturate(self, limits: &ActuatorLimits) -> Self {
        Self {
            v: self.v.clamp(-limits.v_max, limits.v_max),
            w: self.w.clamp(-limits.w_max, limits.w_max),
        }
    }

    pub fn is_finite(self) -> bool {
        self.v.is_finite() && self.w.is_finite()
    }
}

/// Speed limits and the look-ahead offset used by the command mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLimits {
    pub v_max: f64,
    pub w_max: f64,
    pub lookahead: f64,
}

impl ActuatorLimits {
    /// Limits for a given look-ahead with `w_max = 2 v_max / lookahead`.
    pub fn with_lookahead(v_max: f64, lookahead: f64) -> Self {
        Self {
            v_max,
            w_max: 2.0 * v_max / lookahead,
            lookahead,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lookahead > 0.0 && self.lookahead.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "lookahead must be positive, got {}",
                self.lookahead
            )));
        }
        if !(self.v_max > 0.0 && self.w_max > 0.0) {
            return Err(ModelError::InvalidParameter(
                "v_max and w_max must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self::with_lookahead(DEFAULT_V_MAX, DEFAULT_LOOKAHEAD)
    }
}

/// Per-axis scaling of the unicycle model identified from hardware data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelCoefficients {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl ModelCoefficients {
    /// Nominal kinematics.
    pub const IDENTITY: ModelCoefficients = ModelCoefficients {
        a1: 1.0,
        a2: 1.0,
        a3: 1.0,
    };

    /// Coefficients fitted on 30000 hardware samples.
    pub const HARDWARE_FIT: ModelCoefficients = ModelCoefficients {
        a1: 0.8645,
        a2: 0.8119,
        a3: 0.4640,
    };

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = [self.a1, self.a2, self.a3]
            .iter()
            .all(|a| a.is_finite() && *a > 0.0);
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(format!(
                "model coefficients must be positive, got ({}, {}, {})",
                self.a1, self.a2, self.a3
            )))
        }
    }
}

impl Default for ModelCoefficients {
    fn default() -> Self {
        Self::HARDWARE_FIT
    }
}

/// Rate of change of a pose: `(x1', x2', x3')`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseRate {
    pub dx1: f64,
    pub dx2: f64,
    pub dx3: f64,
}

impl PoseRate {
    pub fn as_array(&self) -> [f64; 3] {
        [self.dx1, self.dx2, self.dx3]
    }
}

/// Scaled unicycle kinematics `(a1 v cos(theta), a2 v sin(theta), a3 w)`.
pub fn unicycle_derivative(
    pose: &RobotPose,
    cmd: UnicycleCommand,
    coeffs: &ModelCoefficients,
) -> Result<PoseRate, ModelError> {
    if !pose.is_finite() {
        return Err(ModelError::InvalidInput(format!("non-finite pose {pose:?}")));
    }
    if !cmd.is_finite() {
        return Err(ModelError::InvalidInput(format!(
            "non-finite command {cmd:?}"
        )));
    }
    let (s, c) = pose.x3.sin_cos();
    Ok(PoseRate {
        dx1: coeffs.a1 * cmd.v * c,
        dx2: coeffs.a2 * cmd.v * s,
        dx3: coeffs.a3 * cmd.w,
    })
}

/// Map a planar velocity for the look-ahead point onto a saturated unicycle
/// command. Without saturation the look-ahead point moves with exactly `cmd`.
pub fn si_to_uni(
    cmd: SiCommand,
    pose: &RobotPose,
    limits: &ActuatorLimits,
) -> Result<UnicycleCommand, ModelError> {
    limits.validate()?;
    let (s, c) = pose.x3.sin_cos();
    let v = c * cmd.ux + s * cmd.uy;
    let w = (-s * cmd.ux + c * cmd.uy) / limits.lookahead;
    Ok(UnicycleCommand::new(v, w).saturate(limits))
}

/// Velocity of the look-ahead point under nominal kinematics.
pub fn uni_to_si(cmd: UnicycleCommand, pose: &RobotPose, lookahead: f64) -> SiCommand {
    let (s, c) = pose.x3.sin_cos();
    SiCommand::new(
        cmd.v * c - lookahead * cmd.w * s,
        cmd.v * s + lookahead * cmd.w * c,
    )
}

/// Discrete counterpart of [`si_to_uni`]: the unicycle command whose Euler
/// step of length `dt` moves the look-ahead point by exactly `dt * cmd`,
/// saturated to `limits`.
///
/// With `e` the heading and `p` its left normal, the new look-ahead point must
/// equal `l e + dt u` relative to the old axle. Moving the axle by `dt v e` and
/// turning by `dt w` achieves that when `l sin(dt w) = dt u.p` and
/// `dt v + l cos(dt w) = l + dt u.e`.
pub fn si_to_uni_step(
    cmd: SiCommand,
    pose: &RobotPose,
    limits: &ActuatorLimits,
    dt: f64,
) -> Result<UnicycleCommand, ModelError> {
    limits.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ModelError::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let l = limits.lookahead;
    let (s, c) = pose.x3.sin_cos();
    let along = l + dt * (c * cmd.ux + s * cmd.uy);
    let across = (dt * (-s * cmd.ux + c * cmd.uy)).clamp(-l, l);
    let root = (l * l - across * across).max(0.0).sqrt();
    let v = (along - root) / dt;
    let w = across.atan2(root) / dt;
    Ok(UnicycleCommand::new(v, w).saturate(limits))
}

/// Average velocity of the look-ahead point over one nominal Euler step of `dt`.
pub fn uni_to_si_step(cmd: UnicycleCommand, pose: &RobotPose, lookahead: f64, dt: f64) -> SiCommand {
    let e = pose.heading();
    let turned = Vec2::from_angle(pose.x3 + dt * cmd.w);
    let d = (dt * cmd.v) * e + lookahead * (turned - e);
    SiCommand::from_vec((1.0 / dt) * d)
}

/// Explicit Euler step of one pose.
pub fn euler_pose(pose: &RobotPose, rate: &PoseRate, dt: f64) -> RobotPose {
    RobotPose::new(
        pose.x1 + dt * rate.dx1,
        pose.x2 + dt * rate.dx2,
        pose.x3 + dt * rate.dx3,
    )
}

/// Advance every robot by one Euler step of the scaled unicycle model.
pub fn step(
    state: &SwarmState,
    cmds: &[UnicycleCommand],
    coeffs: &ModelCoefficients,
    dt: f64,
) -> Result<SwarmState, ModelError> {
    if cmds.len() != state.len() {
        return Err(ModelError::LengthMismatch {
            expected: state.len(),
            got: cmds.len(),
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ModelError::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let poses = state
        .poses
        .iter()
        .zip(cmds)
        .map(|(pose, cmd)| {
            let rate = unicycle_derivative(pose, *cmd, coeffs)?;
            Ok(euler_pose(pose, &rate, dt))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(SwarmState {
        poses,
        time: state.time + dt,
    })
}
