//! Evaluation harnesses: sub-task success tables, training sweeps over demo
//! counts, mixture ratios and training regimes, and the open-loop replay drift
//! study. Every harness emits a [`Report`] that embeds its full configuration,
//! so a report file can be re-run to reproduce itself.

mod drift;
mod report;
mod table;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::collect::{collect, CollectError};
use crate::config::{format_list, invalid, parse_list, parse_value, ConfigError, ConfigKeys, KeyValues};
use crate::dataset::{compute_norm_stats, DatasetError, Episode};
use crate::derive_seed;
use crate::executor::{rollout, ChunkPolicy, RolloutConfig};
use crate::nn::{pretrain_then_finetune, train, BcPolicy, TrainConfig, TrainError};
use crate::sim::{SimConfig, TaskInstance, TaskSpec};

pub use drift::{replay_drift, turn_profile, DriftConfig, DriftResult, DriftRun, DriftStats};
pub use report::{rerun, Report};
pub use table::SuccessTable;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Invalid(String),
    #[error("report: {0}")]
    Report(String),
}

/// Runs `cfg.eval_episodes` rollouts on scenes `derive_seed(seed_base, i)`.
pub fn success_table(
    policy: &mut dyn ChunkPolicy,
    spec: &TaskSpec,
    sim: &SimConfig,
    cfg: &RolloutConfig,
) -> Result<SuccessTable, BenchError> {
    if cfg.eval_episodes == 0 {
        return Err(BenchError::Invalid("eval_episodes must be >= 1".into()));
    }
    let mut outcomes = Vec::with_capacity(cfg.eval_episodes);
    let mut names = Vec::new();
    for i in 0..cfg.eval_episodes {
        let task = TaskInstance::new(spec, derive_seed(cfg.seed_base, i as u64));
        names = task.subtask_names();
        let r = rollout(policy, &task, sim, cfg, derive_seed(task.seed, 1));
        outcomes.push(r.outcomes);
    }
    SuccessTable::from_outcomes(names, &outcomes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Regime {
    Cotrain,
    NoCotrain,
    Pretrain,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Cotrain => "cotrain",
            Regime::NoCotrain => "no-cotrain",
            Regime::Pretrain => "pretrain",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cotrain" => Ok(Regime::Cotrain),
            "no-cotrain" => Ok(Regime::NoCotrain),
            "pretrain" => Ok(Regime::Pretrain),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub task: TaskSpec,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub rollout: RolloutConfig,
    pub demo_counts: Vec<usize>,
    /// Training seeds per entry of `demo_counts`.
    pub seeds: Vec<usize>,
    pub static_demos: usize,
    pub corpus_seed: u64,
    pub static_seed: u64,
    pub rhos: Vec<f64>,
    pub mixture_demos: usize,
    pub mixture_seeds: usize,
    /// Demo count and seeds of the regime comparison.
    pub compare_demos: usize,
    pub compare_seeds: usize,
    /// Mixture cells further than this many points below the best are flagged.
    pub flag_margin: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::wipe(),
            sim: SimConfig::default(),
            train: TrainConfig {
                lr: 1e-3,
                steps: 2000,
                pretrain_steps: 2000,
                ..TrainConfig::default()
            },
            rollout: RolloutConfig::default(),
            demo_counts: vec![25, 35, 50],
            seeds: vec![5, 3, 3],
            static_demos: 200,
            corpus_seed: 1,
            static_seed: 2,
            rhos: vec![0.3, 0.5, 0.7],
            mixture_demos: 25,
            mixture_seeds: 3,
            compare_demos: 25,
            compare_seeds: 5,
            flag_margin: 15.0,
        }
    }
}

fn push_prefixed(kv: &mut KeyValues, prefix: &str, inner: KeyValues) {
    for (k, v) in inner.iter() {
        kv.push(format!("{prefix}.{k}"), v);
    }
}

impl ConfigKeys for BenchConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        if let Some((group, rest)) = key.split_once('.') {
            return match group {
                "task" => self.task.set(rest, value),
                "sim" => self.sim.set(rest, value),
                "train" => self.train.set(rest, value),
                "rollout" => self.rollout.set(rest, value),
                _ => Ok(false),
            };
        }
        match key {
            "demo_counts" => self.demo_counts = parse_list(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "static_demos" => self.static_demos = parse_value(key, value)?,
            "corpus_seed" => self.corpus_seed = parse_value(key, value)?,
            "static_seed" => self.static_seed = parse_value(key, value)?,
            "rhos" => self.rhos = parse_list(key, value)?,
            "mixture_demos" => self.mixture_demos = parse_value(key, value)?,
            "mixture_seeds" => self.mixture_seeds = parse_value(key, value)?,
            "compare_demos" => self.compare_demos = parse_value(key, value)?,
            "compare_seeds" => self.compare_seeds = parse_value(key, value)?,
            "flag_margin" => self.flag_margin = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.push("demo_counts", format_list(&self.demo_counts));
        kv.push("seeds", format_list(&self.seeds));
        kv.push("static_demos", self.static_demos);
        kv.push("corpus_seed", self.corpus_seed);
        kv.push("static_seed", self.static_seed);
        kv.push("rhos", format_list(&self.rhos));
        kv.push("mixture_demos", self.mixture_demos);
        kv.push("mixture_seeds", self.mixture_seeds);
        kv.push("compare_demos", self.compare_demos);
        kv.push("compare_seeds", self.compare_seeds);
        kv.push("flag_margin", self.flag_margin);
        push_prefixed(&mut kv, "task", self.task.to_kv());
        push_prefixed(&mut kv, "sim", self.sim.to_kv());
        push_prefixed(&mut kv, "train", self.train.to_kv());
        push_prefixed(&mut kv, "rollout", self.rollout.to_kv());
        kv
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.task.validate()?;
        self.sim.validate()?;
        self.train.validate()?;
        self.rollout.validate()?;
        if self.task.kind.is_static() {
            return Err(invalid("task.kind", "the target task must be mobile"));
        }
        if self.seeds.len() != self.demo_counts.len() {
            return Err(invalid("seeds", "needs one entry per demo count"));
        }
        if self.rhos.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid("rhos", "must lie in [0, 1]"));
        }
        if self.rollout.eval_episodes == 0 {
            return Err(invalid("rollout.eval_episodes", "must be >= 1"));
        }
        if !(self.flag_margin >= 0.0) {
            return Err(invalid("flag_margin", "must be >= 0"));
        }
        Ok(())
    }
}

/// One trained-and-evaluated policy.
#[derive(Clone, Debug)]
pub struct CellRun {
    pub seed: u64,
    pub table: SuccessTable,
    /// Mean of the first and last ten batch losses of the final phase.
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey {
    regime: Regime,
    demos: usize,
    rho_bits: u64,
    seed: u64,
}

/// Seed-aggregated results of one (regime, demos, rho) setting.
#[derive(Clone, Debug)]
pub struct CellSummary {
    pub regime: Regime,
    pub demos: usize,
    pub rho: f64,
    pub runs: Vec<CellRun>,
    /// Whole-task success in percent, mean over seeds.
    pub mean: f64,
    /// Standard error of the mean over seeds.
    pub stderr: f64,
    /// Sum of all runs' counts.
    pub pooled: SuccessTable,
    pub flag: Option<String>,
}

impl CellSummary {
    fn new(regime: Regime, demos: usize, rho: f64, runs: Vec<CellRun>, names: &[String], flag: Option<String>) -> Self {
        let rates: Vec<f64> = runs.iter().map(|r| r.table.whole_rate()).collect();
        let (mean, stderr) = mean_stderr(&rates);
        let mut pooled = SuccessTable::empty(names.to_vec());
        for r in &runs {
            pooled.merge(&r.table);
        }
        Self {
            regime,
            demos,
            rho,
            runs,
            mean,
            stderr,
            pooled,
            flag,
        }
    }

    /// Mean number of completed sub-tasks per episode.
    pub fn mean_progress(&self) -> f64 {
        self.pooled.mean_progress()
    }
}

/// Sample mean and standard error (n - 1 denominator; 0 for one value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Holds the corpora and memoises trained cells so that sweeps sharing a
/// setting (e.g. the regime comparison and the demo-count sweep) train it once.
pub struct Bench {
    pub cfg: BenchConfig,
    mobile: Vec<Episode>,
    static_: Option<Vec<Episode>>,
    cells: BTreeMap<CellKey, CellRun>,
    pub verbose: bool,
}

impl Bench {
    pub fn new(cfg: BenchConfig) -> Result<Self, BenchError> {
        cfg.validate()?;
        let n = cfg
            .demo_counts
            .iter()
            .chain([&cfg.mixture_demos, &cfg.compare_demos])
            .copied()
            .max()
            .unwrap_or(0);
        let mobile = collect(&cfg.task, &cfg.sim, n, cfg.corpus_seed)?;
        Ok(Self {
            cfg,
            mobile,
            static_: None,
            cells: BTreeMap::new(),
            verbose: false,
        })
    }

    /// Uses pre-built corpora instead of collecting them.
    pub fn with_corpora(cfg: BenchConfig, mobile: Vec<Episode>, static_: Vec<Episode>) -> Result<Self, BenchError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            mobile,
            static_: Some(static_),
            cells: BTreeMap::new(),
            verbose: false,
        })
    }

    pub fn mobile(&self) -> &[Episode] {
        &self.mobile
    }

    fn static_corpus(&mut self) -> Result<&[Episode], BenchError> {
        if self.static_.is_none() {
            let spec = TaskSpec::static_pick();
            let eps = collect(&spec, &self.cfg.sim, self.cfg.static_demos, self.cfg.static_seed)?;
            self.static_ = Some(eps);
        }
        Ok(self.static_.as_deref().unwrap_or_default())
    }

    fn subtask_names(&self) -> Vec<String> {
        TaskInstance::new(&self.cfg.task, 0).subtask_names()
    }

    /// Trains and evaluates one cell, or returns the memoised result.
    pub fn cell(&mut self, regime: Regime, demos: usize, rho: f64, seed: u64) -> Result<CellRun, BenchError> {
        let rho = match regime {
            Regime::Cotrain => rho,
            _ => 0.0,
        };
        let key = CellKey {
            regime,
            demos,
            rho_bits: rho.to_bits(),
            seed,
        };
        if let Some(run) = self.cells.get(&key) {
            return Ok(run.clone());
        }
        if demos == 0 {
            return Err(BenchError::Invalid("no mobile demonstrations".into()));
        }
        if demos > self.mobile.len() {
            return Err(BenchError::Invalid(format!(
                "{demos} demos requested, corpus holds {}",
                self.mobile.len()
            )));
        }
        let cfg = TrainConfig {
            rho_static: rho,
            seed,
            ..self.cfg.train.clone()
        };
        let needs_static = regime == Regime::Pretrain || (regime == Regime::Cotrain && rho > 0.0);
        let static_: Vec<Episode> = if needs_static {
            self.static_corpus()?.to_vec()
        } else {
            Vec::new()
        };
        let mobile = &self.mobile[..demos];
        let stats = compute_norm_stats(mobile)?;
        let out = match regime {
            Regime::Pretrain => pretrain_then_finetune(&static_, mobile, &stats, &cfg)?.1,
            _ => train(mobile, &static_, &stats, &cfg)?,
        };
        let mut policy = BcPolicy { net: out.net, stats };
        let table = success_table(&mut policy, &self.cfg.task, &self.cfg.sim, &self.cfg.rollout)?;
        let window = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
        let l = &out.losses;
        let run = CellRun {
            seed,
            initial_loss: window(&l[..l.len().min(10)]),
            final_loss: window(&l[l.len().saturating_sub(10)..]),
            table,
        };
        if self.verbose {
            eprintln!(
                "cell {regime} demos {demos} rho {rho} seed {seed}: whole {:.1}% progress {:.2} loss {:.4} -> {:.4}",
                run.table.whole_rate(),
                run.table.mean_progress(),
                run.initial_loss,
                run.final_loss
            );
        }
        self.cells.insert(key, run.clone());
        Ok(run)
    }

    fn summary(&mut self, regime: Regime, demos: usize, rho: f64, seeds: usize) -> Result<CellSummary, BenchError> {
        let names = self.subtask_names();
        if demos == 0 {
            // Nothing to train on: every episode counts as a failure of the first sub-task.
            let table = SuccessTable::from_counts(names.clone(), self.cfg.rollout.eval_episodes, &vec![0; names.len()])?;
            let runs = (0..seeds as u64)
                .map(|seed| CellRun {
                    seed,
                    table: table.clone(),
                    initial_loss: 0.0,
                    final_loss: 0.0,
                })
                .collect();
            return Ok(CellSummary::new(regime, 0, rho, runs, &names, Some("untrainable".into())));
        }
        let mut runs = Vec::with_capacity(seeds);
        for seed in 0..seeds as u64 {
            runs.push(self.cell(regime, demos, rho, seed)?);
        }
        Ok(CellSummary::new(regime, demos, rho, runs, &names, None))
    }

    /// Success per (demo count, regime) for co-trained and mobile-only BC.
    pub fn efficiency_sweep(&mut self) -> Result<Sweep, BenchError> {
        let rho = self.cfg.train.rho_static;
        let mut cells = Vec::new();
        for (&demos, &seeds) in self.cfg.demo_counts.clone().iter().zip(&self.cfg.seeds.clone()) {
            for regime in [Regime::Cotrain, Regime::NoCotrain] {
                cells.push(self.summary(regime, demos, rho, seeds)?);
            }
        }
        let mut results = Vec::new();
        let find = |r: Regime, n: usize| cells.iter().find(|c| c.regime == r && c.demos == n);
        if let (Some(a), Some(b)) = (find(Regime::Cotrain, 35), find(Regime::NoCotrain, 50)) {
            results.push(("cotrain@35".to_string(), format!("{:.4}", a.mean)));
            results.push(("no-cotrain@50".to_string(), format!("{:.4}", b.mean)));
        }
        for &demos in &self.cfg.demo_counts {
            if let (Some(a), Some(b)) = (find(Regime::Cotrain, demos), find(Regime::NoCotrain, demos)) {
                results.push((format!("gap@{demos}"), format!("{:.4}", a.mean - b.mean)));
            }
        }
        Ok(self.sweep("efficiency", cells, results))
    }

    /// Co-trained BC at `mixture_demos` for every configured rho. Cells more
    /// than `flag_margin` points below the best are flagged.
    pub fn mixture_sweep(&mut self) -> Result<Sweep, BenchError> {
        let mut cells = Vec::new();
        for rho in self.cfg.rhos.clone() {
            let regime = if rho == 0.0 { Regime::NoCotrain } else { Regime::Cotrain };
            cells.push(self.summary(regime, self.cfg.mixture_demos, rho, self.cfg.mixture_seeds)?);
        }
        let best = cells.iter().map(|c| c.mean).fold(f64::NEG_INFINITY, f64::max);
        for c in &mut cells {
            if best - c.mean > self.cfg.flag_margin {
                c.flag = Some(format!("{:.4} points below best", best - c.mean));
            }
        }
        let results = vec![("best".to_string(), format!("{best:.4}"))];
        Ok(self.sweep("mixture", cells, results))
    }

    /// The three training regimes on identical seeds, ordered by success.
    pub fn pretrain_comparison(&mut self) -> Result<Sweep, BenchError> {
        let rho = self.cfg.train.rho_static;
        let mut cells = Vec::new();
        for regime in [Regime::Cotrain, Regime::Pretrain, Regime::NoCotrain] {
            cells.push(self.summary(regime, self.cfg.compare_demos, rho, self.cfg.compare_seeds)?);
        }
        let results = vec![("order".to_string(), order_line(&cells))];
        Ok(self.sweep("pretrain", cells, results))
    }

    fn sweep(&self, kind: &str, cells: Vec<CellSummary>, results: Vec<(String, String)>) -> Sweep {
        let report = report::sweep_report(kind, &self.cfg, &self.subtask_names(), &cells, results);
        Sweep { cells, report }
    }
}

/// Regimes sorted by mean whole-task success, then by mean sub-task progress;
/// e.g. `cotrain 10.0000 > no-cotrain 5.0000 = pretrain 5.0000`.
pub fn order_line(cells: &[CellSummary]) -> String {
    let mut sorted: Vec<&CellSummary> = cells.iter().collect();
    sorted.sort_by(|a, b| {
        b.mean
            .total_cmp(&a.mean)
            .then(b.mean_progress().total_cmp(&a.mean_progress()))
            .then(a.regime.cmp(&b.regime))
    });
    let mut out = String::new();
    for (i, c) in sorted.iter().enumerate() {
        if i > 0 {
            let prev = sorted[i - 1];
            out.push_str(if prev.mean > c.mean { " > " } else { " = " });
        }
        out.push_str(&format!("{} {:.4}", c.regime, c.mean));
    }
    out
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub cells: Vec<CellSummary>,
    pub report: Report,
}

impl Sweep {
    pub fn find(&self, regime: Regime, demos: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.regime == regime && c.demos == demos)
    }
}
