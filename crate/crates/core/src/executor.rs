//! Closed-loop rollouts with delay-compensated chunk execution.
//!
//! A chunk of `k` rows is executed for `k - d` steps: step `i` applies the
//! arm columns of row `i` and the base columns of row `i + d`. The policy is
//! queried again once a schedule is exhausted; chunks never overlap.

use thiserror::Error;

use crate::config::{invalid, ConfigError};
use crate::config_keys;
use crate::dataset::Episode;
use crate::cotrain::full_action;
use crate::sim::task::SubtaskTracker;
use crate::sim::{
    Action, Observation, SimConfig, Simulator, Snapshot, SubtaskOutcome, TaskInstance, ACTION_DIMS, ARM_DIMS,
};

pub type ActionRow = [f64; ACTION_DIMS];

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("delay d = {d} must be smaller than the chunk length k = {k}")]
    DelayTooLarge { k: usize, d: usize },
}

/// Combined actions for one chunk: arm row `i` with base row `i + d`.
pub fn schedule(chunk: &[ActionRow], d: usize) -> Result<Vec<ActionRow>, ExecError> {
    let k = chunk.len();
    if d >= k {
        return Err(ExecError::DelayTooLarge { k, d });
    }
    Ok((0..k - d)
        .map(|i| {
            let mut a = chunk[i];
            a[ARM_DIMS..].copy_from_slice(&chunk[i + d][ARM_DIMS..]);
            a
        })
        .collect())
}

/// Anything that maps an observation to a chunk of physical-unit actions.
pub trait ChunkPolicy {
    fn query(&mut self, obs: &Observation) -> Result<Vec<ActionRow>, String>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutConfig {
    pub k: usize,
    pub d: usize,
    /// 0 uses the task's horizon.
    pub horizon: usize,
    pub eval_episodes: usize,
    pub seed_base: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            k: 45,
            d: 5,
            horizon: 0,
            eval_episodes: 20,
            seed_base: 1_000_000,
        }
    }
}

fn check_rollout(c: &RolloutConfig) -> Result<(), ConfigError> {
    if c.d >= c.k {
        return Err(invalid("d", "must be smaller than k"));
    }
    Ok(())
}

config_keys!(RolloutConfig, [k, d, horizon, eval_episodes, seed_base], validate = check_rollout);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ColumnGroup {
    Arm,
    Base,
}

/// One executed cell: which query's chunk, which row, which columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Executed {
    pub chunk: usize,
    pub row: usize,
    pub group: ColumnGroup,
}

#[derive(Clone, Debug)]
pub struct RolloutResult {
    pub outcomes: Vec<SubtaskOutcome>,
    pub success: bool,
    /// Snapshot before the first step and after every step.
    pub trace: Vec<Snapshot>,
    pub ledger: Vec<Executed>,
    pub queries: usize,
    pub steps: usize,
    pub failure: Option<String>,
}

impl RolloutResult {
    pub fn last(&self) -> &Snapshot {
        self.trace.last().expect("trace holds the initial snapshot")
    }
}

/// Runs `policy` on a task scene until the horizon or full success.
pub fn rollout(
    policy: &mut dyn ChunkPolicy,
    task: &TaskInstance,
    sim_cfg: &SimConfig,
    cfg: &RolloutConfig,
    noise_seed: u64,
) -> RolloutResult {
    let horizon = if cfg.horizon == 0 {
        task.spec.horizon
    } else {
        cfg.horizon
    };
    let mut sim = Simulator::for_task(sim_cfg.clone(), task, noise_seed);
    let mut tracker = SubtaskTracker::new(&task.sub_tasks);
    let first = sim.snapshot();
    tracker.observe(&first);
    let mut trace = vec![first];
    let mut ledger = Vec::new();
    let mut queries = 0;
    let mut failure = None;

    'outer: while sim.steps < horizon && !tracker.all_done() {
        let chunk = match policy.query(&sim.observe()) {
            Ok(c) => c,
            Err(e) => {
                failure = Some(format!("policy error: {e}"));
                break;
            }
        };
        let q = queries;
        queries += 1;
        if chunk.len() < cfg.k {
            failure = Some(format!("policy returned {} rows, k = {}", chunk.len(), cfg.k));
            break;
        }
        let steps = match schedule(&chunk[..cfg.k], cfg.d) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        for (i, a) in steps.iter().enumerate() {
            if sim.steps >= horizon || tracker.all_done() {
                break 'outer;
            }
            if let Some(c) = a.iter().position(|v| !v.is_finite()) {
                failure = Some(format!("non-finite action: query {q}, row {i}, column {c}"));
                break 'outer;
            }
            if let Err(e) = sim.step(&Action::from_array(a)) {
                failure = Some(e.to_string());
                break 'outer;
            }
            ledger.push(Executed {
                chunk: q,
                row: i,
                group: ColumnGroup::Arm,
            });
            ledger.push(Executed {
                chunk: q,
                row: i + cfg.d,
                group: ColumnGroup::Base,
            });
            let snap = sim.snapshot();
            tracker.observe(&snap);
            trace.push(snap);
        }
    }
    RolloutResult {
        outcomes: tracker.outcomes(),
        success: tracker.all_done(),
        steps: sim.steps,
        trace,
        ledger,
        queries,
        failure,
    }
}

/// Emits chunks cut from a recorded action sequence so that, under
/// [`schedule`], step `t` applies exactly recorded action `t`.
#[derive(Clone, Debug)]
pub struct ReplayPolicy {
    pub actions: Vec<ActionRow>,
    pub k: usize,
    pub d: usize,
    cursor: usize,
}

impl ReplayPolicy {
    pub fn new(actions: Vec<ActionRow>, k: usize, d: usize) -> Self {
        Self {
            actions,
            k,
            d,
            cursor: 0,
        }
    }

    pub fn from_episode(ep: &Episode, k: usize, d: usize) -> Self {
        Self::new((0..ep.len()).map(|t| full_action(ep, t)).collect(), k, d)
    }
}

impl ChunkPolicy for ReplayPolicy {
    fn query(&mut self, _obs: &Observation) -> Result<Vec<ActionRow>, String> {
        if self.actions.is_empty() {
            return Err("nothing to replay".into());
        }
        let last = self.actions.len() - 1;
        let t0 = self.cursor;
        let chunk = (0..self.k)
            .map(|r| {
                let mut row = self.actions[(t0 + r).min(last)];
                let base_src = (t0 + r).saturating_sub(self.d).min(last);
                row[ARM_DIMS..].copy_from_slice(&self.actions[base_src][ARM_DIMS..]);
                row
            })
            .collect();
        self.cursor += self.k - self.d;
        Ok(chunk)
    }
}

impl ChunkPolicy for crate::nn::BcPolicy {
    fn query(&mut self, obs: &Observation) -> Result<Vec<ActionRow>, String> {
        self.predict(obs).map_err(|e| e.to_string())
    }
}

impl ChunkPolicy for crate::vinn::VinnPolicy {
    fn query(&mut self, obs: &Observation) -> Result<Vec<ActionRow>, String> {
        self.predict(obs).map_err(|e| e.to_string())
    }
}
