//! Waypoint-following scripted demonstrator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::kinematics::{forward_kinematics, solve_ik};
use super::world::World;
use super::{normalize_angle, Action, BaseVelocity, RobotState, Side, SimConfig, ARM_JOINTS};

const DRIVE_SPEED: f64 = 0.6;
const TURN_SPEED: f64 = 1.5;
const HEADING_GAIN: f64 = 2.5;
const DISTANCE_GAIN: f64 = 2.5;
const GRIPPER_TOL: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseGoal {
    pub x: f64,
    pub y: f64,
    pub theta: Option<f64>,
    /// Back up to the goal instead of turning towards it.
    pub reverse: bool,
}

impl BaseGoal {
    pub fn to(x: f64, y: f64, theta: Option<f64>) -> Self {
        Self {
            x,
            y,
            theta,
            reverse: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReachTarget {
    /// Current position of an object plus a world-frame offset.
    Object { index: usize, offset: [f64; 2] },
    Point([f64; 2]),
}

impl ReachTarget {
    pub fn object(index: usize) -> Self {
        ReachTarget::Object {
            index,
            offset: [0.0, 0.0],
        }
    }

    fn resolve(&self, world: &World) -> Option<[f64; 2]> {
        match *self {
            ReachTarget::Object { index, offset } => world
                .objects
                .get(index)
                .map(|o| [o.pos[0] + offset[0], o.pos[1] + offset[1]]),
            ReachTarget::Point(p) => Some(p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArmPosture {
    /// Keep the last commanded joints.
    Hold,
    Joints([f64; ARM_JOINTS]),
    /// Solve IK each step for a world-frame point.
    Reach(ReachTarget),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmGoal {
    pub posture: ArmPosture,
    /// `None` keeps the last commanded gripper value.
    pub gripper: Option<f64>,
}

impl ArmGoal {
    pub fn new(posture: ArmPosture, gripper: f64) -> Self {
        Self {
            posture,
            gripper: Some(gripper),
        }
    }

    pub fn hold() -> Self {
        Self {
            posture: ArmPosture::Hold,
            gripper: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waypoint {
    pub base: Option<BaseGoal>,
    /// Indexed by [`Side::index`].
    pub arms: [ArmGoal; 2],
    pub pos_tol: f64,
    pub angle_tol: f64,
    pub ee_tol: f64,
    pub joint_tol: f64,
    /// Extra steps to stay once every tolerance is met.
    pub settle: u32,
    /// Steps allowed before the episode is declared failed.
    pub timeout: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpertStatus {
    Running,
    Done,
    /// Waypoint `0` based index that timed out.
    Failed(usize),
}

/// Exploration noise on emitted commands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertNoise {
    pub v: f64,
    pub omega: f64,
    pub joint: f64,
}

impl ExpertNoise {
    pub fn none() -> Self {
        Self {
            v: 0.0,
            omega: 0.0,
            joint: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScriptedExpert {
    program: Vec<Waypoint>,
    cursor: usize,
    settled: u32,
    elapsed: u32,
    status: ExpertStatus,
    commanded: Option<Action>,
    ik_seed: [Option<[f64; ARM_JOINTS]>; 2],
    noise: ExpertNoise,
    rng: ChaCha8Rng,
}

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

/// Proportional go-to-pose law. Returns the command and whether the goal
/// is reached within tolerance.
pub fn base_command(robot: &RobotState, goal: &BaseGoal, pos_tol: f64, angle_tol: f64) -> (BaseVelocity, bool) {
    let body = robot.base.to_body([goal.x, goal.y]);
    let dist = body[0].hypot(body[1]);
    let heading_err = goal
        .theta
        .map(|t| normalize_angle(t - robot.base.theta))
        .unwrap_or(0.0);
    let reached = dist <= pos_tol && heading_err.abs() <= angle_tol;
    if dist > pos_tol {
        let mut alpha = body[1].atan2(body[0]);
        let sign = if goal.reverse {
            alpha = normalize_angle(alpha - std::f64::consts::PI);
            -1.0
        } else {
            1.0
        };
        let omega = (HEADING_GAIN * alpha).clamp(-TURN_SPEED, TURN_SPEED);
        let align = alpha.cos().max(0.0).powi(2);
        let v = (DISTANCE_GAIN * dist).min(DRIVE_SPEED) * align;
        (BaseVelocity { v: sign * v, omega }, reached)
    } else {
        let omega = (HEADING_GAIN * heading_err).clamp(-TURN_SPEED, TURN_SPEED);
        (BaseVelocity { v: 0.0, omega }, reached)
    }
}

impl ScriptedExpert {
    pub fn new(program: Vec<Waypoint>, noise: ExpertNoise, seed: u64) -> Self {
        let status = if program.is_empty() {
            ExpertStatus::Done
        } else {
            ExpertStatus::Running
        };
        Self {
            program,
            cursor: 0,
            settled: 0,
            elapsed: 0,
            status,
            commanded: None,
            ik_seed: [None, None],
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn status(&self) -> ExpertStatus {
        self.status
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Next command for the current state.
    pub fn act(&mut self, robot: &RobotState, world: &World, cfg: &SimConfig) -> Action {
        if self.cursor >= self.program.len() && self.status == ExpertStatus::Running {
            self.status = ExpertStatus::Done;
        }
        if self.status != ExpertStatus::Running {
            return Action::hold(robot);
        }
        let wp = self.program[self.cursor].clone();
        let previous = self.commanded.unwrap_or_else(|| Action::hold(robot));
        let geom = cfg.geometry();
        let mut reached = true;
        let mut action = Action::default();

        if let Some(goal) = &wp.base {
            let (cmd, ok) = base_command(robot, goal, wp.pos_tol, wp.angle_tol);
            action.base_cmd = cmd;
            reached &= ok;
        }

        let max_step = cfg.joint_rate * cfg.dt;
        for side in Side::BOTH {
            let arm = robot.arm(side);
            let goal = &wp.arms[side.index()];
            let mut target = previous.arm_joints(side);
            match goal.posture {
                ArmPosture::Hold => self.ik_seed[side.index()] = None,
                ArmPosture::Joints(q) => {
                    self.ik_seed[side.index()] = None;
                    target = q;
                    reached &= arm
                        .joints
                        .iter()
                        .zip(&q)
                        .all(|(a, b)| (a - b).abs() <= wp.joint_tol);
                }
                ArmPosture::Reach(t) => match t.resolve(world) {
                    Some(point) => {
                        let seed = self.ik_seed[side.index()].unwrap_or(arm.joints);
                        let sol = solve_ik(&geom, side, &seed, robot.base.to_body(point), cfg.joint_limit);
                        self.ik_seed[side.index()] = Some(sol.joints);
                        target = sol.joints;
                        let ee = forward_kinematics(&robot.base, arm, side, &geom);
                        reached &= (ee[0] - point[0]).hypot(ee[1] - point[1]) <= wp.ee_tol;
                    }
                    None => reached = false,
                },
            }
            let mut joints = arm.joints;
            for (q, t) in joints.iter_mut().zip(&target) {
                *q += (t - *q).clamp(-max_step, max_step);
            }
            if matches!(goal.posture, ArmPosture::Hold) {
                joints = target;
            }
            let gripper = goal.gripper.unwrap_or_else(|| previous.gripper(side));
            reached &= (arm.gripper - gripper).abs() <= GRIPPER_TOL;
            action.set_arm(side, &joints, gripper);
        }
        self.commanded = Some(action);

        self.elapsed += 1;
        if reached {
            self.settled += 1;
            if self.settled > wp.settle {
                self.cursor += 1;
                self.settled = 0;
                self.elapsed = 0;
                if self.cursor == self.program.len() {
                    self.status = ExpertStatus::Done;
                }
            }
        } else {
            self.settled = 0;
            if self.elapsed > wp.timeout {
                self.status = ExpertStatus::Failed(self.cursor);
            }
        }

        let mut noisy = action;
        if wp.base.is_some() {
            noisy.base_cmd.v += gauss(&mut self.rng, self.noise.v);
            noisy.base_cmd.omega += gauss(&mut self.rng, self.noise.omega);
        }
        if self.noise.joint > 0.0 {
            for side in Side::BOTH {
                let mut q = noisy.arm_joints(side);
                for v in q.iter_mut() {
                    *v += gauss(&mut self.rng, self.noise.joint);
                }
                noisy.set_arm(side, &q, noisy.gripper(side));
            }
        }
        noisy
    }
}
