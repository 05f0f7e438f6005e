//! Scene objects and their kinematic interactions with the robot.

use std::fmt;
use std::str::FromStr;

use super::kinematics::forward_kinematics;
use super::{RobotState, Side, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectKind {
    Towel,
    Glass,
    Spill,
    Puck,
    Block,
    Goal,
}

impl ObjectKind {
    pub fn graspable(self) -> bool {
        matches!(self, ObjectKind::Towel | ObjectKind::Glass | ObjectKind::Block)
    }

    /// Flat regions are drawn under everything else and never move.
    pub fn is_flat(self) -> bool {
        matches!(self, ObjectKind::Spill | ObjectKind::Goal)
    }

    /// Categorical colour as a grey level.
    pub fn shade(self) -> u8 {
        match self {
            ObjectKind::Towel => 200,
            ObjectKind::Glass => 160,
            ObjectKind::Spill => 90,
            ObjectKind::Puck => 180,
            ObjectKind::Block => 230,
            ObjectKind::Goal => 50,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Towel => "towel",
            ObjectKind::Glass => "glass",
            ObjectKind::Spill => "spill",
            ObjectKind::Puck => "puck",
            ObjectKind::Block => "block",
            ObjectKind::Goal => "goal",
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "towel" => ObjectKind::Towel,
            "glass" => ObjectKind::Glass,
            "spill" => ObjectKind::Spill,
            "puck" => ObjectKind::Puck,
            "block" => ObjectKind::Block,
            "goal" => ObjectKind::Goal,
            _ => return Err(format!("unknown object kind `{s}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Object {
    pub kind: ObjectKind,
    pub pos: [f64; 2],
    pub radius: f64,
    pub held_by: Option<Side>,
}

impl Object {
    pub fn new(kind: ObjectKind, pos: [f64; 2], radius: f64) -> Self {
        Self {
            kind,
            pos,
            radius,
            held_by: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct World {
    pub objects: Vec<Object>,
    /// Steps during which a held towel was inside a spill region.
    pub wipe_progress: u32,
}

impl World {
    pub fn new(objects: Vec<Object>) -> Self {
        Self {
            objects,
            wipe_progress: 0,
        }
    }

    pub fn held(&self, side: Side) -> Option<usize> {
        self.objects.iter().position(|o| o.held_by == Some(side))
    }

    /// Applies grasp/release, carries held objects, pushes pucks and
    /// accumulates wiping, given the robot state before and after a step.
    pub fn update(&mut self, prev: &RobotState, next: &RobotState, cfg: &SimConfig) {
        let geom = cfg.geometry();
        for side in Side::BOTH {
            let ee = forward_kinematics(&next.base, next.arm(side), side, &geom);
            let was_closed = prev.arm(side).is_closed();
            let closed = next.arm(side).is_closed();
            if !closed {
                for o in self.objects.iter_mut().filter(|o| o.held_by == Some(side)) {
                    o.held_by = None;
                }
            } else if !was_closed && self.held(side).is_none() {
                let candidate = self
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.kind.graspable() && o.held_by.is_none())
                    .map(|(i, o)| (i, (dist(o.pos, ee) - o.radius).max(0.0)))
                    .filter(|&(_, d)| d <= cfg.grasp_radius)
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((i, _)) = candidate {
                    self.objects[i].held_by = Some(side);
                }
            }
            for o in self.objects.iter_mut().filter(|o| o.held_by == Some(side)) {
                o.pos = ee;
            }
        }

        let base = [next.base.x, next.base.y];
        for o in self.objects.iter_mut().filter(|o| o.kind == ObjectKind::Puck) {
            let d = dist(o.pos, base);
            let min = cfg.base_radius + o.radius;
            if d < min {
                let dir = if d > 1e-12 {
                    [(o.pos[0] - base[0]) / d, (o.pos[1] - base[1]) / d]
                } else {
                    let (s, c) = next.base.theta.sin_cos();
                    [c, s]
                };
                o.pos = [base[0] + dir[0] * min, base[1] + dir[1] * min];
            }
        }

        let towel_in_spill = self.objects.iter().any(|t| {
            t.kind == ObjectKind::Towel
                && t.held_by.is_some()
                && self
                    .objects
                    .iter()
                    .any(|s| s.kind == ObjectKind::Spill && dist(s.pos, t.pos) <= s.radius)
        });
        if towel_in_spill {
            self.wipe_progress += 1;
        }
    }
}

/// Robot and world at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub robot: RobotState,
    pub world: World,
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
