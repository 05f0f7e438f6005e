//! Demonstration collection with the scripted expert.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{
    write_episode, CameraSpec, DatasetError, Episode, EpisodeHeader, Manifest, Origin, StepRecord,
    FORMAT_VERSION, FRONT_CAMERA, POLICY_CAMERAS,
};
use crate::derive_seed;
use crate::sim::expert::{ExpertNoise, ExpertStatus, ScriptedExpert};
use crate::sim::render::{FRONT_SIZE, TOP_SIZE, WRIST_SIZE};
use crate::sim::task::SubtaskTracker;
use crate::sim::{
    Action, BaseVelocity, SimConfig, SimError, Simulator, Snapshot, SubtaskOutcome, TaskInstance, TaskSpec, ARM_DIMS,
};

/// Hold steps appended after the expert finishes.
pub const TAIL_STEPS: usize = 5;
pub const NOISE_STREAM: u64 = 1;
pub const EXPERT_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("only {got} of {wanted} expert episodes succeeded after {attempts} attempts")]
    TooManyFailures { wanted: usize, got: usize, attempts: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Camera list written for a task: table-top scenes carry the front view.
pub fn cameras_for(spec: &TaskSpec) -> Vec<CameraSpec> {
    let mut cams = vec![
        CameraSpec::new(POLICY_CAMERAS[0], TOP_SIZE, TOP_SIZE),
        CameraSpec::new(POLICY_CAMERAS[1], WRIST_SIZE, WRIST_SIZE),
        CameraSpec::new(POLICY_CAMERAS[2], WRIST_SIZE, WRIST_SIZE),
    ];
    if spec.kind.is_static() {
        cams.push(CameraSpec::new(FRONT_CAMERA, FRONT_SIZE, FRONT_SIZE));
    }
    cams
}

/// Clamps an action the way the simulator will, so the recorded label is the
/// command actually applied.
pub fn applied_action(action: &Action, sim: &Simulator) -> Action {
    let cfg = &sim.cfg;
    let mut a = *action;
    for (i, t) in a.arm_targets.iter_mut().enumerate() {
        *t = if i % 7 == 6 {
            t.clamp(0.0, 1.0)
        } else {
            t.clamp(-cfg.joint_limit, cfg.joint_limit)
        };
    }
    a.base_cmd = if sim.base_locked {
        BaseVelocity::default()
    } else {
        BaseVelocity {
            v: a.base_cmd.v.clamp(-cfg.v_max, cfg.v_max),
            omega: a.base_cmd.omega.clamp(-cfg.omega_max, cfg.omega_max),
        }
    };
    a
}

/// Builds records while a simulator runs.
#[derive(Clone, Debug)]
pub struct Recorder {
    pub header: EpisodeHeader,
    pub records: Vec<StepRecord>,
}

impl Recorder {
    pub fn new(task: &str, origin: Origin, cameras: Vec<CameraSpec>, cfg: &SimConfig, seed: u64) -> Self {
        Self {
            header: EpisodeHeader {
                version: FORMAT_VERSION,
                task: task.to_string(),
                origin,
                control_hz: cfg.control_hz(),
                arm_dims: ARM_DIMS,
                base_dims: if origin == Origin::Mobile { 2 } else { 0 },
                cameras,
                steps: 0,
                seed,
            },
            records: Vec::new(),
        }
    }

    /// Records the current observation with the action about to be applied.
    pub fn record(&mut self, sim: &Simulator, action: &Action) {
        let views = sim.views();
        let mut rasters = vec![views.top.data, views.left_wrist.data, views.right_wrist.data];
        if self.header.camera_index(FRONT_CAMERA).is_some() {
            rasters.push(sim.front_view().data);
        }
        let base = sim.robot.base;
        let mut action_arms = [0.0f32; ARM_DIMS];
        for (d, s) in action_arms.iter_mut().zip(&action.arm_targets) {
            *d = *s as f32;
        }
        self.records.push(StepRecord {
            step: self.records.len() as u32,
            proprio: sim.robot.proprio().map(|v| v as f32),
            base_pose: [base.x as f32, base.y as f32, base.theta as f32],
            action_arms,
            action_base: match self.header.origin {
                Origin::Mobile => vec![action.base_cmd.v as f32, action.base_cmd.omega as f32],
                Origin::Static => Vec::new(),
            },
            rasters,
        });
    }

    pub fn finish(mut self) -> Episode {
        self.header.steps = self.records.len();
        Episode {
            header: self.header,
            records: self.records,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExpertEpisode {
    pub episode: Episode,
    pub outcomes: Vec<SubtaskOutcome>,
    pub success: bool,
    pub last: Snapshot,
}

/// Runs the scripted expert on the scene for `seed`, recording every step.
pub fn run_expert(spec: &TaskSpec, cfg: &SimConfig, seed: u64) -> Result<ExpertEpisode, SimError> {
    let task = TaskInstance::new(spec, seed);
    let mut sim = Simulator::for_task(cfg.clone(), &task, derive_seed(seed, NOISE_STREAM));
    let noise = ExpertNoise {
        v: spec.expert_noise_v,
        omega: spec.expert_noise_omega,
        joint: spec.expert_noise_joint,
    };
    let mut expert = ScriptedExpert::new(task.program.clone(), noise, derive_seed(seed, EXPERT_STREAM));
    let origin = if spec.kind.is_static() {
        Origin::Static
    } else {
        Origin::Mobile
    };
    let mut rec = Recorder::new(spec.kind.name(), origin, cameras_for(spec), cfg, seed);
    let mut tracker = SubtaskTracker::new(&task.sub_tasks);
    tracker.observe(&sim.snapshot());
    let mut tail = 0;
    while rec.records.len() < spec.horizon {
        let action = applied_action(&expert.act(&sim.robot, &sim.world, &sim.cfg), &sim);
        rec.record(&sim, &action);
        sim.step(&action)?;
        tracker.observe(&sim.snapshot());
        match expert.status() {
            ExpertStatus::Running => {}
            ExpertStatus::Done => {
                tail += 1;
                if tail >= TAIL_STEPS {
                    break;
                }
            }
            ExpertStatus::Failed(_) => break,
        }
    }
    Ok(ExpertEpisode {
        episode: rec.finish(),
        outcomes: tracker.outcomes(),
        success: tracker.completed() >= task.expert_subtasks(),
        last: sim.snapshot(),
    })
}

/// Collects `n` successful expert episodes, trying scene seeds derived from
/// `seed` in order and skipping failures (at most `4 n + 10` attempts).
pub fn collect(spec: &TaskSpec, cfg: &SimConfig, n: usize, seed: u64) -> Result<Vec<Episode>, CollectError> {
    let max_attempts = 4 * n + 10;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts == max_attempts {
            return Err(CollectError::TooManyFailures {
                wanted: n,
                got: out.len(),
                attempts,
            });
        }
        let run = run_expert(spec, cfg, derive_seed(seed, attempts as u64))?;
        attempts += 1;
        if run.success {
            out.push(run.episode);
        }
    }
    Ok(out)
}

/// Writes episodes as `<prefix>_NNNN.maep` plus `manifest.txt` under `dir`.
pub fn write_corpus(episodes: &[Episode], dir: &Path, prefix: &str) -> Result<Manifest, CollectError> {
    fs::create_dir_all(dir).map_err(|source| CollectError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut manifest = Manifest::default();
    for (i, ep) in episodes.iter().enumerate() {
        let path = dir.join(format!("{prefix}_{i:04}.maep"));
        write_episode(ep, &path)?;
        manifest.paths.push(path);
    }
    manifest.write(dir.join("manifest.txt"))?;
    Ok(manifest)
}
