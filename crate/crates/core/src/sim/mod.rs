//! Planar kinematic simulation of a differential-drive base carrying two
//! position-controlled arms.
//!
//! Frames: the world is the plane with `x`/`y` in meters. The body frame has
//! `x` pointing forward and `y` to the left, so a base at heading `theta = 0`
//! drives along world `+x`. Both arms mount on the front of the base and
//! extend forward at zero joint angles.

pub mod expert;
pub mod kinematics;
pub mod noise;
pub mod render;
pub mod simulator;
pub mod task;
pub mod world;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::config::{invalid, ConfigError, ConfigKeys, KeyValues};

pub use kinematics::{forward_kinematics, ArmGeometry};
pub use noise::{NoiseConfig, NoiseModel};
pub use render::{render, Observation, Raster, RasterView, Views};
pub use simulator::Simulator;
pub use task::{evaluate_subtasks, Predicate, SubtaskOutcome, TaskInstance, TaskKind, TaskSpec};
pub use world::{Object, ObjectKind, Snapshot, World};

pub const ARM_JOINTS: usize = 6;
/// Two arms of six joints and one gripper each.
pub const ARM_DIMS: usize = 14;
pub const BASE_DIMS: usize = 2;
pub const ACTION_DIMS: usize = ARM_DIMS + BASE_DIMS;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid action: component {index} is not finite")]
    InvalidAction { index: usize },
    #[error("invalid time step {0}")]
    InvalidDt(f64),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    /// Maps a body-frame point into the world frame.
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Maps a world-frame point into the body frame.
    pub fn to_body(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            _ => Err(format!("unknown side `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmState {
    pub joints: [f64; ARM_JOINTS],
    /// 0 = closed, 1 = open.
    pub gripper: f64,
}

impl Default for ArmState {
    fn default() -> Self {
        Self {
            joints: [0.0; ARM_JOINTS],
            gripper: 1.0,
        }
    }
}

impl ArmState {
    pub fn is_closed(&self) -> bool {
        self.gripper < 0.5
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BaseVelocity {
    pub v: f64,
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RobotState {
    pub base: Pose2D,
    pub base_vel: BaseVelocity,
    pub left: ArmState,
    pub right: ArmState,
    /// First-order filter state of the base velocity tracker (before per-step noise).
    pub lag: BaseVelocity,
}

impl RobotState {
    pub fn at(base: Pose2D) -> Self {
        Self {
            base,
            ..Self::default()
        }
    }

    pub fn arm(&self, side: Side) -> &ArmState {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn arm_mut(&mut self, side: Side) -> &mut ArmState {
        match side {
            Side::Left => &mut self.left,
            Side::Right => &mut self.right,
        }
    }

    /// Arm proprioception: left joints, left gripper, right joints, right gripper.
    pub fn proprio(&self) -> [f64; ARM_DIMS] {
        let mut out = [0.0; ARM_DIMS];
        for side in Side::BOTH {
            let arm = self.arm(side);
            let off = side.index() * 7;
            out[off..off + 6].copy_from_slice(&arm.joints);
            out[off + 6] = arm.gripper;
        }
        out
    }
}

/// One whole-body command: 14 arm targets (layout as [`RobotState::proprio`])
/// plus base linear and angular velocity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Action {
    pub arm_targets: [f64; ARM_DIMS],
    pub base_cmd: BaseVelocity,
}

impl Action {
    pub fn from_array(a: &[f64; ACTION_DIMS]) -> Self {
        let mut arm_targets = [0.0; ARM_DIMS];
        arm_targets.copy_from_slice(&a[..ARM_DIMS]);
        Self {
            arm_targets,
            base_cmd: BaseVelocity {
                v: a[ARM_DIMS],
                omega: a[ARM_DIMS + 1],
            },
        }
    }

    pub fn to_array(&self) -> [f64; ACTION_DIMS] {
        let mut out = [0.0; ACTION_DIMS];
        out[..ARM_DIMS].copy_from_slice(&self.arm_targets);
        out[ARM_DIMS] = self.base_cmd.v;
        out[ARM_DIMS + 1] = self.base_cmd.omega;
        out
    }

    /// Holds the current arm configuration and stops the base.
    pub fn hold(state: &RobotState) -> Self {
        Self {
            arm_targets: state.proprio(),
            base_cmd: BaseVelocity::default(),
        }
    }

    pub fn arm_joints(&self, side: Side) -> [f64; ARM_JOINTS] {
        let off = side.index() * 7;
        let mut q = [0.0; ARM_JOINTS];
        q.copy_from_slice(&self.arm_targets[off..off + 6]);
        q
    }

    pub fn gripper(&self, side: Side) -> f64 {
        self.arm_targets[side.index() * 7 + 6]
    }

    pub fn set_arm(&mut self, side: Side, joints: &[f64; ARM_JOINTS], gripper: f64) {
        let off = side.index() * 7;
        self.arm_targets[off..off + 6].copy_from_slice(joints);
        self.arm_targets[off + 6] = gripper;
    }

    fn check_finite(&self) -> Result<(), SimError> {
        match self.to_array().iter().position(|v| !v.is_finite()) {
            Some(index) => Err(SimError::InvalidAction { index }),
            None => Ok(()),
        }
    }
}

/// Physical limits and geometry. Also the `sim` configuration file.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub joint_rate: f64,
    pub gripper_rate: f64,
    pub joint_limit: f64,
    pub link_length: f64,
    pub mount_forward: f64,
    pub mount_lateral: f64,
    pub grasp_radius: f64,
    pub base_radius: f64,
    pub noise: NoiseConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            v_max: 1.6,
            omega_max: 2.0,
            joint_rate: 1.5,
            gripper_rate: 5.0,
            joint_limit: PI,
            link_length: 0.12,
            mount_forward: 0.25,
            mount_lateral: 0.2,
            grasp_radius: 0.05,
            base_radius: 0.2,
            noise: NoiseConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn noise_free() -> Self {
        Self {
            noise: NoiseConfig::zero(),
            ..Self::default()
        }
    }

    pub fn geometry(&self) -> ArmGeometry {
        ArmGeometry {
            link_length: self.link_length,
            mount_forward: self.mount_forward,
            mount_lateral: self.mount_lateral,
        }
    }

    pub fn control_hz(&self) -> u32 {
        (1.0 / self.dt).round() as u32
    }
}

impl ConfigKeys for SimConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        use crate::config::parse_value as p;
        match key {
            "dt" => self.dt = p(key, value)?,
            "v_max" => self.v_max = p(key, value)?,
            "omega_max" => self.omega_max = p(key, value)?,
            "joint_rate" => self.joint_rate = p(key, value)?,
            "gripper_rate" => self.gripper_rate = p(key, value)?,
            "joint_limit" => self.joint_limit = p(key, value)?,
            "link_length" => self.link_length = p(key, value)?,
            "mount_forward" => self.mount_forward = p(key, value)?,
            "mount_lateral" => self.mount_lateral = p(key, value)?,
            "grasp_radius" => self.grasp_radius = p(key, value)?,
            "base_radius" => self.base_radius = p(key, value)?,
            _ => match key.strip_prefix("noise.") {
                Some(rest) => return self.noise.set(rest, value),
                None => return Ok(false),
            },
        }
        Ok(true)
    }

    fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.push("dt", self.dt);
        kv.push("v_max", self.v_max);
        kv.push("omega_max", self.omega_max);
        kv.push("joint_rate", self.joint_rate);
        kv.push("gripper_rate", self.gripper_rate);
        kv.push("joint_limit", self.joint_limit);
        kv.push("link_length", self.link_length);
        kv.push("mount_forward", self.mount_forward);
        kv.push("mount_lateral", self.mount_lateral);
        kv.push("grasp_radius", self.grasp_radius);
        kv.push("base_radius", self.base_radius);
        for (k, v) in self.noise.to_kv().iter() {
            kv.push(format!("noise.{k}"), v);
        }
        kv
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0) {
            return Err(invalid("dt", "must be > 0"));
        }
        for (k, v) in [
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
            ("joint_rate", self.joint_rate),
            ("gripper_rate", self.gripper_rate),
            ("joint_limit", self.joint_limit),
            ("link_length", self.link_length),
            ("grasp_radius", self.grasp_radius),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(k, "must be positive and finite"));
            }
        }
        self.noise.validate()
    }
}

/// Advances the robot by one control step.
///
/// Arms track their position targets under a per-joint rate limit. The base
/// is velocity controlled: the actual velocity follows a first-order lag
/// towards the biased command, plus per-step Gaussian noise, and the pose is
/// integrated along the exact unicycle arc.
pub fn step(
    state: &RobotState,
    action: &Action,
    noise: &mut NoiseModel,
    cfg: &SimConfig,
) -> Result<RobotState, SimError> {
    action.check_finite()?;
    if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
        return Err(SimError::InvalidDt(cfg.dt));
    }
    let dt = cfg.dt;
    let mut next = *state;

    for side in Side::BOTH {
        let targets = action.arm_joints(side);
        let arm = next.arm_mut(side);
        let max_step = cfg.joint_rate * dt;
        for (q, &t) in arm.joints.iter_mut().zip(&targets) {
            let t = t.clamp(-cfg.joint_limit, cfg.joint_limit);
            *q += (t - *q).clamp(-max_step, max_step);
        }
        let g = action.gripper(side).clamp(0.0, 1.0);
        let max_g = cfg.gripper_rate * dt;
        arm.gripper = (arm.gripper + (g - arm.gripper).clamp(-max_g, max_g)).clamp(0.0, 1.0);
    }

    let cmd = BaseVelocity {
        v: action.base_cmd.v.clamp(-cfg.v_max, cfg.v_max),
        omega: action.base_cmd.omega.clamp(-cfg.omega_max, cfg.omega_max),
    };
    let (lag, actual) = noise.track(state.lag, cmd, dt);
    next.lag = lag;
    next.base_vel = BaseVelocity {
        v: actual.v.clamp(-cfg.v_max, cfg.v_max),
        omega: actual.omega.clamp(-cfg.omega_max, cfg.omega_max),
    };
    next.base = integrate_unicycle(state.base, next.base_vel, dt);
    Ok(next)
}

/// Exact integration of constant `(v, omega)` over `dt`.
pub fn integrate_unicycle(pose: Pose2D, vel: BaseVelocity, dt: f64) -> Pose2D {
    let BaseVelocity { v, omega } = vel;
    if omega.abs() > 1e-6 {
        let th1 = pose.theta + omega * dt;
        let r = v / omega;
        Pose2D {
            x: pose.x + r * (th1.sin() - pose.theta.sin()),
            y: pose.y - r * (th1.cos() - pose.theta.cos()),
            theta: normalize_angle(th1),
        }
    } else {
        let (s, c) = pose.theta.sin_cos();
        Pose2D {
            x: pose.x + v * dt * c,
            y: pose.y + v * dt * s,
            theta: normalize_angle(pose.theta + omega * dt),
        }
    }
}
