//! A stateful simulator instance: robot, world and its own noise stream.

use super::render::{render, render_front, Observation, Raster, Views};
use super::task::TaskInstance;
use super::world::{Snapshot, World};
use super::{step, Action, BaseVelocity, NoiseModel, RobotState, SimConfig, SimError};

#[derive(Clone, Debug)]
pub struct Simulator {
    pub cfg: SimConfig,
    pub robot: RobotState,
    pub world: World,
    pub noise: NoiseModel,
    /// Table-top scenes keep the base fixed whatever the command.
    pub base_locked: bool,
    pub steps: usize,
}

impl Simulator {
    pub fn new(cfg: SimConfig, robot: RobotState, world: World, noise: NoiseModel) -> Self {
        Self {
            cfg,
            robot,
            world,
            noise,
            base_locked: false,
            steps: 0,
        }
    }

    /// Starts a task scene; base noise is drawn from `noise_seed`.
    pub fn for_task(cfg: SimConfig, task: &TaskInstance, noise_seed: u64) -> Self {
        let noise = NoiseModel::sample(&cfg.noise, noise_seed);
        Self {
            base_locked: task.base_locked,
            ..Self::new(cfg, task.robot, task.world.clone(), noise)
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<(), SimError> {
        let mut action = *action;
        if self.base_locked {
            action.base_cmd = BaseVelocity::default();
        }
        let mut next = step(&self.robot, &action, &mut self.noise, &self.cfg)?;
        if self.base_locked {
            next.base = self.robot.base;
            next.base_vel = BaseVelocity::default();
            next.lag = BaseVelocity::default();
        }
        self.world.update(&self.robot, &next, &self.cfg);
        self.robot = next;
        self.steps += 1;
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            robot: self.robot,
            world: self.world.clone(),
        }
    }

    pub fn views(&self) -> Views {
        render(&self.robot, &self.world, &self.cfg)
    }

    pub fn front_view(&self) -> Raster {
        render_front(&self.robot, &self.world, &self.cfg)
    }

    pub fn observe(&self) -> Observation {
        Observation::new(self.views(), self.robot.proprio())
    }
}
