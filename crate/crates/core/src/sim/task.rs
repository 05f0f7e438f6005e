//! Task scenes, sub-task predicates and success accounting.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::expert::{ArmGoal, ArmPosture, BaseGoal, ReachTarget, Waypoint};
use super::world::{dist, Object, ObjectKind, Snapshot, World};
use super::{Pose2D, RobotState, Side, ARM_JOINTS};
use crate::config::{invalid, parse_value, ConfigError, ConfigKeys, KeyValues};

/// Compact arm posture used while driving.
pub const CARRY_LEFT: [f64; ARM_JOINTS] = [0.3, 0.9, 0.9, 0.9, 0.0, 0.0];
pub const CARRY_RIGHT: [f64; ARM_JOINTS] = [-0.3, -0.9, -0.9, -0.9, 0.0, 0.0];

pub fn carry_posture(side: Side) -> [f64; ARM_JOINTS] {
    match side {
        Side::Left => CARRY_LEFT,
        Side::Right => CARRY_RIGHT,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Navigate, grasp a towel, return, lift a glass and wipe a spill.
    Wipe,
    /// Push a row of pucks past a line with the base.
    Push,
    /// Base locked at the origin; pick an object and place it on a goal.
    StaticPick,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Wipe => "wipe",
            TaskKind::Push => "push",
            TaskKind::StaticPick => "static-pick",
        }
    }

    pub fn is_static(self) -> bool {
        self == TaskKind::StaticPick
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wipe" => Ok(TaskKind::Wipe),
            "push" => Ok(TaskKind::Push),
            "static-pick" | "static_pick" => Ok(TaskKind::StaticPick),
            _ => Err(format!("unknown task `{s}`")),
        }
    }
}

/// Scene randomisation ranges, tolerances and horizon for one task family.
/// Positions are world coordinates relative to the home pose at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub horizon: usize,
    pub start_jitter: f64,
    pub start_heading_jitter: f64,
    // wipe
    pub towel_x: f64,
    pub towel_y: f64,
    pub towel_range: f64,
    pub glass_x: f64,
    pub glass_y: f64,
    pub spill_x: f64,
    pub spill_y: f64,
    pub table_range: f64,
    pub spill_radius: f64,
    pub wipe_steps: u32,
    pub home_tol: f64,
    // push
    pub pucks: usize,
    pub program_pucks: usize,
    pub puck_x: f64,
    pub puck_spacing: f64,
    pub puck_range: f64,
    pub line_x: f64,
    // static pick
    pub pick_x_min: f64,
    pub pick_x_max: f64,
    pub pick_y_max: f64,
    pub place_tol: f64,
    // expert
    pub pos_tol: f64,
    pub angle_tol: f64,
    pub ee_tol: f64,
    pub joint_tol: f64,
    pub waypoint_timeout: u32,
    pub expert_noise_v: f64,
    pub expert_noise_omega: f64,
    pub expert_noise_joint: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self::wipe()
    }
}

impl TaskSpec {
    pub fn wipe() -> Self {
        Self {
            kind: TaskKind::Wipe,
            horizon: 900,
            start_jitter: 0.05,
            start_heading_jitter: 0.1,
            towel_x: 1.3,
            towel_y: 0.9,
            towel_range: 0.15,
            glass_x: 0.75,
            glass_y: -0.2,
            spill_x: 0.78,
            spill_y: 0.22,
            table_range: 0.04,
            spill_radius: 0.07,
            wipe_steps: 25,
            home_tol: 0.12,
            pucks: 5,
            program_pucks: 3,
            puck_x: 1.0,
            puck_spacing: 0.5,
            puck_range: 0.05,
            line_x: 1.6,
            pick_x_min: 0.6,
            pick_x_max: 0.85,
            pick_y_max: 0.35,
            place_tol: 0.04,
            pos_tol: 0.04,
            angle_tol: 0.08,
            ee_tol: 0.012,
            joint_tol: 0.03,
            waypoint_timeout: 450,
            expert_noise_v: 0.02,
            expert_noise_omega: 0.05,
            expert_noise_joint: 0.005,
        }
    }

    pub fn push() -> Self {
        Self {
            kind: TaskKind::Push,
            horizon: 2200,
            ..Self::wipe()
        }
    }

    pub fn static_pick() -> Self {
        Self {
            kind: TaskKind::StaticPick,
            horizon: 500,
            start_jitter: 0.0,
            start_heading_jitter: 0.0,
            ..Self::wipe()
        }
    }

    pub fn for_kind(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Wipe => Self::wipe(),
            TaskKind::Push => Self::push(),
            TaskKind::StaticPick => Self::static_pick(),
        }
    }

    /// Push scene evaluated on every puck, not only the demonstrated ones.
    pub fn push_eval() -> Self {
        Self {
            program_pucks: 5,
            ..Self::push()
        }
    }
}

macro_rules! task_fields {
    ($($field:ident),* $(,)?) => {
        impl TaskSpec {
            fn set_field(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
                match key {
                    $(stringify!($field) => self.$field = parse_value(key, value)?,)*
                    _ => return Ok(false),
                }
                Ok(true)
            }

            fn write_fields(&self, kv: &mut KeyValues) {
                $(kv.push(stringify!($field), &self.$field);)*
            }
        }
    };
}

task_fields!(
    horizon,
    start_jitter,
    start_heading_jitter,
    towel_x,
    towel_y,
    towel_range,
    glass_x,
    glass_y,
    spill_x,
    spill_y,
    table_range,
    spill_radius,
    wipe_steps,
    home_tol,
    pucks,
    program_pucks,
    puck_x,
    puck_spacing,
    puck_range,
    line_x,
    pick_x_min,
    pick_x_max,
    pick_y_max,
    place_tol,
    pos_tol,
    angle_tol,
    ee_tol,
    joint_tol,
    waypoint_timeout,
    expert_noise_v,
    expert_noise_omega,
    expert_noise_joint,
);

impl ConfigKeys for TaskSpec {
    fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        if key == "kind" {
            self.kind = parse_value(key, value)?;
            return Ok(true);
        }
        self.set_field(key, value)
    }

    fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.push("kind", self.kind);
        self.write_fields(&mut kv);
        kv
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be > 0"));
        }
        if self.program_pucks > self.pucks {
            return Err(invalid("program_pucks", "cannot exceed pucks"));
        }
        if self.pick_x_min > self.pick_x_max {
            return Err(invalid("pick_x_min", "must not exceed pick_x_max"));
        }
        Ok(())
    }

    /// Starts from the defaults of the file's `kind` before applying keys.
    fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        let kind = match kv.get("kind") {
            Some(v) => parse_value("kind", v)?,
            None => TaskKind::Wipe,
        };
        let mut spec = Self::for_kind(kind);
        kv.apply_to(&mut spec)?;
        Ok(spec)
    }
}

/// A pure test on the world state.
#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    /// Object `object` is held, optionally by a specific arm.
    Holding { object: usize, side: Option<Side> },
    BaseNear { x: f64, y: f64, tol: f64 },
    WipeProgress { min_steps: u32 },
    /// Object centre beyond `x = line_x`.
    PastLine { object: usize, line_x: f64 },
    /// Object released within `tol` of a point.
    Placed { object: usize, at: [f64; 2], tol: f64 },
    All(Vec<Predicate>),
}

impl Predicate {
    pub fn holds(&self, snap: &Snapshot) -> bool {
        let objects = &snap.world.objects;
        match self {
            Predicate::Holding { object, side } => objects.get(*object).is_some_and(|o| match side {
                Some(s) => o.held_by == Some(*s),
                None => o.held_by.is_some(),
            }),
            Predicate::BaseNear { x, y, tol } => {
                dist([snap.robot.base.x, snap.robot.base.y], [*x, *y]) <= *tol
            }
            Predicate::WipeProgress { min_steps } => snap.world.wipe_progress >= *min_steps,
            Predicate::PastLine { object, line_x } => {
                objects.get(*object).is_some_and(|o| o.pos[0] > *line_x)
            }
            Predicate::Placed { object, at, tol } => objects
                .get(*object)
                .is_some_and(|o| o.held_by.is_none() && dist(o.pos, *at) <= *tol),
            Predicate::All(ps) => ps.iter().all(|p| p.holds(snap)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubtaskOutcome {
    Success,
    Failure,
    /// An earlier sub-task failed, so this one was never attempted.
    NotAttempted,
}

impl fmt::Display for SubtaskOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubtaskOutcome::Success => "T",
            SubtaskOutcome::Failure => "F",
            SubtaskOutcome::NotAttempted => "-",
        })
    }
}

/// Incremental sub-task progress over a stream of snapshots. Sub-task `i`
/// succeeds at the first snapshot (at or after sub-task `i - 1`'s success)
/// where its predicate holds.
#[derive(Clone, Debug)]
pub struct SubtaskTracker<'a> {
    predicates: Vec<&'a Predicate>,
    completed: usize,
}

impl<'a> SubtaskTracker<'a> {
    pub fn new(sub_tasks: &'a [(String, Predicate)]) -> Self {
        Self {
            predicates: sub_tasks.iter().map(|(_, p)| p).collect(),
            completed: 0,
        }
    }

    pub fn observe(&mut self, snap: &Snapshot) {
        while self.completed < self.predicates.len() && self.predicates[self.completed].holds(snap) {
            self.completed += 1;
        }
    }

    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn all_done(&self) -> bool {
        self.completed == self.predicates.len()
    }

    pub fn outcomes(&self) -> Vec<SubtaskOutcome> {
        (0..self.predicates.len())
            .map(|i| match i.cmp(&self.completed) {
                std::cmp::Ordering::Less => SubtaskOutcome::Success,
                std::cmp::Ordering::Equal => SubtaskOutcome::Failure,
                std::cmp::Ordering::Greater => SubtaskOutcome::NotAttempted,
            })
            .collect()
    }
}

/// Ordered per-sub-task outcomes for a full episode trace.
pub fn evaluate_subtasks(trace: &[Snapshot], sub_tasks: &[(String, Predicate)]) -> Vec<SubtaskOutcome> {
    let mut tracker = SubtaskTracker::new(sub_tasks);
    for snap in trace {
        tracker.observe(snap);
        if tracker.all_done() {
            break;
        }
    }
    tracker.outcomes()
}

/// One randomised scene of a task, with its predicates and expert program.
#[derive(Clone, Debug)]
pub struct TaskInstance {
    pub spec: TaskSpec,
    pub seed: u64,
    pub robot: RobotState,
    pub world: World,
    pub sub_tasks: Vec<(String, Predicate)>,
    pub program: Vec<Waypoint>,
    pub base_locked: bool,
}

fn jitter(rng: &mut ChaCha8Rng, r: f64) -> f64 {
    if r > 0.0 {
        rng.random_range(-r..=r)
    } else {
        0.0
    }
}

fn carry_arms(robot: &mut RobotState) {
    robot.left.joints = CARRY_LEFT;
    robot.right.joints = CARRY_RIGHT;
}

impl TaskInstance {
    pub fn new(spec: &TaskSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inst = match spec.kind {
            TaskKind::Wipe => wipe_instance(spec, &mut rng),
            TaskKind::Push => push_instance(spec, &mut rng),
            TaskKind::StaticPick => static_pick_instance(spec, &mut rng),
        };
        inst.seed = seed;
        inst
    }

    pub fn initial_snapshot(&self) -> Snapshot {
        Snapshot {
            robot: self.robot,
            world: self.world.clone(),
        }
    }

    /// Sub-tasks the scripted program is written to achieve; push scenes
    /// demonstrate only the first `program_pucks`.
    pub fn expert_subtasks(&self) -> usize {
        match self.spec.kind {
            TaskKind::Push => self.spec.program_pucks.min(self.sub_tasks.len()),
            _ => self.sub_tasks.len(),
        }
    }

    pub fn subtask_names(&self) -> Vec<String> {
        self.sub_tasks.iter().map(|(n, _)| n.clone()).collect()
    }
}

impl Waypoint {
    fn from_spec(spec: &TaskSpec) -> Self {
        Self {
            base: None,
            arms: [ArmGoal::hold(), ArmGoal::hold()],
            pos_tol: spec.pos_tol,
            angle_tol: spec.angle_tol,
            ee_tol: spec.ee_tol,
            joint_tol: spec.joint_tol,
            settle: 0,
            timeout: spec.waypoint_timeout,
        }
    }

    fn arm(mut self, side: Side, goal: ArmGoal) -> Self {
        self.arms[side.index()] = goal;
        self
    }

    fn base(mut self, goal: BaseGoal) -> Self {
        self.base = Some(goal);
        self
    }

    fn settle(mut self, steps: u32) -> Self {
        self.settle = steps;
        self
    }
}

fn start_pose(spec: &TaskSpec, rng: &mut ChaCha8Rng, at: [f64; 2]) -> Pose2D {
    let x = at[0] + jitter(rng, spec.start_jitter);
    let y = at[1] + jitter(rng, spec.start_jitter);
    Pose2D::new(x, y, jitter(rng, spec.start_heading_jitter))
}

fn wipe_instance(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> TaskInstance {
    let start = start_pose(spec, rng, [0.0, 0.0]);
    let towel = [
        spec.towel_x + jitter(rng, spec.towel_range),
        spec.towel_y + jitter(rng, spec.towel_range),
    ];
    let glass = [
        spec.glass_x + jitter(rng, spec.table_range),
        spec.glass_y + jitter(rng, spec.table_range),
    ];
    let spill = [
        spec.spill_x + jitter(rng, spec.table_range),
        spec.spill_y + jitter(rng, spec.table_range),
    ];
    const TOWEL: usize = 0;
    const GLASS: usize = 1;
    let world = World::new(vec![
        Object::new(ObjectKind::Towel, towel, 0.04),
        Object::new(ObjectKind::Glass, glass, 0.035),
        Object::new(ObjectKind::Spill, spill, spec.spill_radius),
    ]);
    let mut robot = RobotState::at(start);
    carry_arms(&mut robot);

    // Park so the towel sits 0.47 m straight ahead of the left shoulder.
    let heading = (towel[1] - start.y).atan2(towel[0] - start.x);
    let park = Pose2D::new(0.0, 0.0, heading).to_world([-0.72, -0.2]);
    let park = [towel[0] + park[0], towel[1] + park[1]];

    let wp = || Waypoint::from_spec(spec);
    let open = |posture| ArmGoal::new(posture, 1.0);
    let closed = |posture| ArmGoal::new(posture, 0.0);
    let sweep = [[0.0, -0.035], [0.0, 0.035], [0.0, -0.035], [0.0, 0.035], [0.0, -0.035]];

    let mut program = vec![
        wp().base(BaseGoal::to(park[0], park[1], Some(heading)))
            .arm(Side::Left, open(ArmPosture::Hold)),
        wp().arm(Side::Left, open(ArmPosture::Reach(ReachTarget::object(TOWEL)))),
        wp().arm(Side::Left, closed(ArmPosture::Hold)).settle(8),
        wp().arm(Side::Left, closed(ArmPosture::Joints(CARRY_LEFT))),
        wp().base(BaseGoal::to(0.0, 0.0, Some(0.0)))
            .arm(Side::Left, closed(ArmPosture::Hold)),
        wp().arm(Side::Left, closed(ArmPosture::Hold))
            .arm(Side::Right, open(ArmPosture::Reach(ReachTarget::object(GLASS)))),
        wp().arm(Side::Left, closed(ArmPosture::Hold))
            .arm(Side::Right, closed(ArmPosture::Hold))
            .settle(8),
    ];
    for offset in sweep {
        let point = [spill[0] + offset[0], spill[1] + offset[1]];
        program.push(
            wp().arm(Side::Left, closed(ArmPosture::Reach(ReachTarget::Point(point))))
                .arm(Side::Right, closed(ArmPosture::Hold))
                .settle(6),
        );
    }

    let sub_tasks = vec![
        (
            "grasp_towel".to_string(),
            Predicate::Holding {
                object: TOWEL,
                side: Some(Side::Left),
            },
        ),
        (
            "return_lift_glass".to_string(),
            Predicate::All(vec![
                Predicate::BaseNear {
                    x: 0.0,
                    y: 0.0,
                    tol: spec.home_tol,
                },
                Predicate::Holding {
                    object: GLASS,
                    side: Some(Side::Right),
                },
                Predicate::Holding {
                    object: TOWEL,
                    side: Some(Side::Left),
                },
            ]),
        ),
        (
            "wipe".to_string(),
            Predicate::All(vec![
                Predicate::WipeProgress {
                    min_steps: spec.wipe_steps,
                },
                Predicate::Holding {
                    object: GLASS,
                    side: Some(Side::Right),
                },
            ]),
        ),
    ];
    TaskInstance {
        spec: spec.clone(),
        seed: 0,
        robot,
        world,
        sub_tasks,
        program,
        base_locked: false,
    }
}

fn push_instance(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> TaskInstance {
    let y0 = -spec.puck_spacing * (spec.pucks.saturating_sub(1)) as f64 / 2.0;
    let pucks: Vec<[f64; 2]> = (0..spec.pucks)
        .map(|i| {
            [
                spec.puck_x + jitter(rng, spec.puck_range),
                y0 + spec.puck_spacing * i as f64 + jitter(rng, spec.puck_range),
            ]
        })
        .collect();
    let start = start_pose(spec, rng, [spec.puck_x - 0.6, y0]);
    let mut robot = RobotState::at(start);
    carry_arms(&mut robot);
    let world = World::new(
        pucks
            .iter()
            .map(|&p| Object::new(ObjectKind::Puck, p, 0.06))
            .collect(),
    );

    let wp = || Waypoint::from_spec(spec);
    let reach = 0.2 + 0.06;
    let mut program = Vec::new();
    for p in pucks.iter().take(spec.program_pucks) {
        let behind = p[0] - 0.45;
        program.push(wp().base(BaseGoal::to(behind, p[1], Some(0.0))));
        program.push(wp().base(BaseGoal::to(spec.line_x + 0.08 - reach, p[1], None)));
        program.push(wp().base(BaseGoal {
            reverse: true,
            ..BaseGoal::to(behind, p[1], None)
        }));
    }
    let sub_tasks = (0..spec.pucks)
        .map(|i| {
            (
                format!("puck_{}", i + 1),
                Predicate::PastLine {
                    object: i,
                    line_x: spec.line_x,
                },
            )
        })
        .collect();
    TaskInstance {
        spec: spec.clone(),
        seed: 0,
        robot,
        world,
        sub_tasks,
        program,
        base_locked: false,
    }
}

fn static_pick_instance(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> TaskInstance {
    let kinds = [ObjectKind::Glass, ObjectKind::Towel, ObjectKind::Block];
    let kind = kinds[rng.random_range(0..kinds.len())];
    let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
    let sign = if side == Side::Left { 1.0 } else { -1.0 };
    let draw = |rng: &mut ChaCha8Rng| {
        [
            rng.random_range(spec.pick_x_min..=spec.pick_x_max),
            sign * rng.random_range(0.0..=spec.pick_y_max),
        ]
    };
    let object = draw(rng);
    let mut goal = draw(rng);
    while dist(object, goal) < 0.12 {
        goal = draw(rng);
    }
    let world = World::new(vec![
        Object::new(ObjectKind::Goal, goal, 0.05),
        Object::new(kind, object, 0.035),
    ]);
    let mut robot = RobotState::at(Pose2D::default());
    carry_arms(&mut robot);

    let wp = || Waypoint::from_spec(spec);
    let program = vec![
        wp().arm(side, ArmGoal::new(ArmPosture::Reach(ReachTarget::object(1)), 1.0)),
        wp().arm(side, ArmGoal::new(ArmPosture::Hold, 0.0)).settle(8),
        wp().arm(side, ArmGoal::new(ArmPosture::Reach(ReachTarget::Point(goal)), 0.0)),
        wp().arm(side, ArmGoal::new(ArmPosture::Hold, 1.0)).settle(8),
        wp().arm(side, ArmGoal::new(ArmPosture::Joints(carry_posture(side)), 1.0)),
    ];
    let sub_tasks = vec![
        (
            "grasp".to_string(),
            Predicate::Holding {
                object: 1,
                side: None,
            },
        ),
        (
            "place".to_string(),
            Predicate::Placed {
                object: 1,
                at: goal,
                tol: spec.place_tol,
            },
        ),
    ];
    TaskInstance {
        spec: spec.clone(),
        seed: 0,
        robot,
        world,
        sub_tasks,
        program,
        base_locked: true,
    }
}
