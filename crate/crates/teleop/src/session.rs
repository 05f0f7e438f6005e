//! One interactive session: resolves commands into simulator actions, steps
//! the scene and records episodes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use base64::Engine;
use wholebody_core::collect::{applied_action, cameras_for, Recorder};
use wholebody_core::dataset::{write_episode, Manifest, Origin};
use wholebody_core::derive_seed;
use wholebody_core::sim::kinematics::solve_ik;
use wholebody_core::sim::{
    Action, BaseVelocity, Raster, Side, SimConfig, Simulator, TaskInstance, TaskSpec, ARM_JOINTS,
};

use crate::protocol::{
    ArmCommand, ArmMsg, Frame, ImageMsg, ObjectMsg, PoseMsg, RecordFlag, ServerMessage, TeleopCommand, ViewsMsg,
};

/// Largest end-effector displacement resolved in one tick, metres.
pub const MAX_EE_STEP: f64 = 0.05;
/// Largest joint target change accepted in one tick, radians.
pub const MAX_JOINT_STEP: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub task: TaskSpec,
    pub sim: SimConfig,
    /// Scene seeds are `derive_seed(seed, episode)`.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Attach rendered views to every frame.
    pub views: bool,
}

impl SessionConfig {
    pub fn new(task: TaskSpec, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            task,
            sim: SimConfig::default(),
            seed: 0,
            out_dir: out_dir.into(),
            views: true,
        }
    }
}

pub struct Session {
    cfg: SessionConfig,
    task: TaskInstance,
    sim: Simulator,
    targets: [f64; 14],
    recorder: Option<Recorder>,
    scenes: u64,
    completed: usize,
    last_seq: Option<u64>,
    tick: u64,
    written: Vec<PathBuf>,
}

fn image(r: &Raster) -> ImageMsg {
    ImageMsg {
        width: r.width,
        height: r.height,
        data: base64::engine::general_purpose::STANDARD.encode(&r.data),
    }
}

impl Session {
    pub fn new(cfg: SessionConfig) -> anyhow::Result<Self> {
        if cfg.task.kind.is_static() {
            bail!("teleoperation records mobile demonstrations; `{}` is a static task", cfg.task.kind);
        }
        let task = TaskInstance::new(&cfg.task, derive_seed(cfg.seed, 0));
        let sim = Simulator::for_task(cfg.sim.clone(), &task, derive_seed(task.seed, 1));
        let targets = task.robot.proprio();
        Ok(Self {
            cfg,
            task,
            sim,
            targets,
            recorder: None,
            scenes: 1,
            completed: 0,
            last_seq: None,
            tick: 0,
            written: Vec::new(),
        })
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    pub fn task(&self) -> &TaskInstance {
        &self.task
    }

    pub fn is_recording(&self) -> bool {
        self.recorder.is_some()
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Starts a fresh scene so every recording begins from
    /// `TaskInstance::new(spec, header.seed)`.
    fn reset(&mut self) {
        self.task = TaskInstance::new(&self.cfg.task, derive_seed(self.cfg.seed, self.scenes));
        self.scenes += 1;
        self.sim = Simulator::for_task(self.cfg.sim.clone(), &self.task, derive_seed(self.task.seed, 1));
        self.targets = self.task.robot.proprio();
        self.completed = 0;
    }

    /// The action a command produces from the current state. Pure and
    /// deterministic; the result is clamped to actuator limits.
    pub fn resolve(&self, cmd: Option<&TeleopCommand>) -> Action {
        let cfg = &self.sim.cfg;
        let geom = cfg.geometry();
        let mut targets = self.targets;
        let mut base = BaseVelocity::default();
        if let Some(cmd) = cmd {
            if let Some(b) = cmd.base {
                base = BaseVelocity { v: b.v, omega: b.omega };
            }
            for (side, arm) in [(Side::Left, cmd.left), (Side::Right, cmd.right)] {
                let off = side.index() * 7;
                let mut q = [0.0; ARM_JOINTS];
                q.copy_from_slice(&targets[off..off + ARM_JOINTS]);
                match arm {
                    None => {}
                    Some(ArmCommand::Joints(dq)) => {
                        for (qi, d) in q.iter_mut().zip(dq) {
                            *qi += d.clamp(-MAX_JOINT_STEP, MAX_JOINT_STEP);
                        }
                    }
                    Some(ArmCommand::Ee(d)) => {
                        let (mut dx, mut dy) = (d.dx, d.dy);
                        let n = dx.hypot(dy);
                        if n > MAX_EE_STEP {
                            dx *= MAX_EE_STEP / n;
                            dy *= MAX_EE_STEP / n;
                        }
                        let ee = geom.ee_body(&q, side);
                        q = solve_ik(&geom, side, &q, [ee[0] + dx, ee[1] + dy], cfg.joint_limit).joints;
                    }
                }
                targets[off..off + ARM_JOINTS].copy_from_slice(&q);
            }
            if let Some(g) = cmd.gripper {
                for (side, on) in [(Side::Left, g.left), (Side::Right, g.right)] {
                    if on {
                        let i = side.index() * 7 + 6;
                        targets[i] = if targets[i] < 0.5 { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        applied_action(
            &Action {
                arm_targets: targets,
                base_cmd: base,
            },
            &self.sim,
        )
    }

    /// Applies at most one (already coalesced) command and advances the
    /// simulator by one control step. Returns the messages for the client.
    pub fn tick(&mut self, cmd: Option<&TeleopCommand>) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        let mut cmd = cmd;
        if let Some(c) = cmd {
            if self.last_seq.is_some_and(|s| c.seq <= s) {
                out.push(ServerMessage::Error {
                    message: format!("seq {} is not greater than {}", c.seq, self.last_seq.unwrap_or(0)),
                });
                cmd = None;
            } else {
                self.last_seq = Some(c.seq);
            }
        }
        let flag = cmd.and_then(|c| c.record);
        if flag == Some(RecordFlag::Start) && self.recorder.is_none() {
            self.reset();
            self.recorder = Some(Recorder::new(
                self.cfg.task.kind.name(),
                Origin::Mobile,
                cameras_for(&self.cfg.task),
                &self.cfg.sim,
                self.task.seed,
            ));
        }
        let action = self.resolve(cmd);
        if flag != Some(RecordFlag::Stop) {
            if let Some(rec) = self.recorder.as_mut() {
                rec.record(&self.sim, &action);
            }
        }
        self.sim.step(&action).expect("resolved actions are finite");
        self.targets = action.arm_targets;
        let snap = self.sim.snapshot();
        while self.completed < self.task.sub_tasks.len() && self.task.sub_tasks[self.completed].1.holds(&snap) {
            self.completed += 1;
        }
        self.tick += 1;
        if flag == Some(RecordFlag::Stop) {
            match self.finish() {
                Ok(Some(msg)) => out.push(msg),
                Ok(None) => {}
                Err(e) => out.push(ServerMessage::Error { message: format!("{e:#}") }),
            }
        }
        out.push(ServerMessage::Frame(Box::new(self.frame())));
        out
    }

    /// Writes the open recording, if any, and lists it in the output
    /// directory's manifest.
    pub fn finish(&mut self) -> anyhow::Result<Option<ServerMessage>> {
        let Some(rec) = self.recorder.take() else {
            return Ok(None);
        };
        if rec.records.is_empty() {
            return Ok(None);
        }
        let ep = rec.finish();
        let dir = &self.cfg.out_dir;
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let manifest_path = dir.join("manifest.txt");
        let mut manifest = if manifest_path.exists() {
            Manifest::read(&manifest_path)?
        } else {
            Manifest::default()
        };
        let path = next_free(dir, &format!("teleop_{}", self.cfg.task.kind.name()));
        write_episode(&ep, &path)?;
        manifest.paths.push(path.clone());
        manifest.write(&manifest_path)?;
        self.written.push(path.clone());
        Ok(Some(ServerMessage::Recorded {
            path: path.display().to_string(),
            steps: ep.len(),
        }))
    }

    pub fn frame(&self) -> Frame {
        let r = &self.sim.robot;
        let arm = |side: Side| ArmMsg {
            joints: r.arm(side).joints,
            gripper: r.arm(side).gripper,
        };
        let views = self.cfg.views.then(|| {
            let v = self.sim.views();
            ViewsMsg {
                top: image(&v.top),
                lwrist: image(&v.left_wrist),
                rwrist: image(&v.right_wrist),
            }
        });
        Frame {
            tick: self.tick,
            seq: self.last_seq,
            base: PoseMsg {
                x: r.base.x,
                y: r.base.y,
                theta: r.base.theta,
                v: r.base_vel.v,
                omega: r.base_vel.omega,
            },
            left: arm(Side::Left),
            right: arm(Side::Right),
            objects: self
                .sim
                .world
                .objects
                .iter()
                .map(|o| ObjectMsg {
                    kind: o.kind.name().to_string(),
                    x: o.pos[0],
                    y: o.pos[1],
                    radius: o.radius,
                    held_by: o.held_by.map(|s| s.to_string()),
                })
                .collect(),
            recording: self.recorder.is_some(),
            recorded_steps: self.recorder.as_ref().map_or(0, |r| r.records.len()),
            subtasks: self.task.subtask_names(),
            completed: self.completed,
            views,
        }
    }
}

fn next_free(dir: &Path, prefix: &str) -> PathBuf {
    (0..)
        .map(|i| dir.join(format!("{prefix}_{i:04}.maep")))
        .find(|p| !p.exists())
        .expect("some index is free")
}
