use std::collections::BTreeSet;

use proptest::prelude::*;

use wholebody_core::collect::run_expert;
use wholebody_core::executor::{
    rollout, schedule, ActionRow, ChunkPolicy, ColumnGroup, ExecError, Executed, ReplayPolicy, RolloutConfig,
};
use wholebody_core::sim::{Observation, SimConfig, SubtaskOutcome, TaskInstance, TaskSpec, ARM_DIMS};

/// Row `r` of chunk `c` holds `c * 1000 + r` in every column.
fn tagged_chunk(c: usize, k: usize) -> Vec<ActionRow> {
    (0..k).map(|r| [(c * 1000 + r) as f64; 16]).collect()
}

#[test]
fn schedule_examples() {
    let chunk = tagged_chunk(0, 45);
    let s = schedule(&chunk, 5).unwrap();
    assert_eq!(s.len(), 40);
    assert_eq!(s[0][0], 0.0);
    assert_eq!(s[0][ARM_DIMS], 5.0);
    assert_eq!(s[39][0], 39.0);
    assert_eq!(s[39][15], 44.0);
    assert_eq!(schedule(&chunk, 0).unwrap(), chunk);
    assert_eq!(schedule(&chunk, 45), Err(ExecError::DelayTooLarge { k: 45, d: 45 }));
}

/// Reference enumeration of the rule: per chunk, arm rows `0..k-d` and base
/// rows `d..k`.
fn reference_ledger(chunks: usize, k: usize, d: usize, steps: usize) -> Vec<Executed> {
    let mut out = Vec::new();
    let mut t = 0;
    'outer: for c in 0..chunks {
        for i in 0..k - d {
            if t == steps {
                break 'outer;
            }
            out.push(Executed { chunk: c, row: i, group: ColumnGroup::Arm });
            out.push(Executed { chunk: c, row: d + i, group: ColumnGroup::Base });
            t += 1;
        }
    }
    out
}

/// Emits tagged chunks and counts queries.
struct Tagged {
    k: usize,
    queries: usize,
    arm: [f64; 14],
}

impl ChunkPolicy for Tagged {
    fn query(&mut self, _obs: &Observation) -> Result<Vec<ActionRow>, String> {
        let c = self.queries;
        self.queries += 1;
        // Arms hold still; the angular speed encodes (chunk, row).
        Ok((0..self.k)
            .map(|r| {
                let mut row = [0.0; 16];
                row[..14].copy_from_slice(&self.arm);
                row[15] = ((c * 1000 + r) as f64) * 1e-9;
                row
            })
            .collect())
    }
}

fn run_tagged(k: usize, d: usize, horizon: usize) -> (wholebody_core::executor::RolloutResult, usize) {
    let spec = TaskSpec::wipe();
    let task = TaskInstance::new(&spec, 1);
    let mut policy = Tagged { k, queries: 0, arm: task.robot.proprio() };
    let cfg = RolloutConfig { k, d, horizon, ..RolloutConfig::default() };
    let r = rollout(&mut policy, &task, &SimConfig::noise_free(), &cfg, 0);
    (r, policy.queries)
}

#[test]
fn two_chunks_skip_the_first_base_rows() {
    let (r, q) = run_tagged(45, 5, 80);
    assert_eq!(q, 2);
    let base2: BTreeSet<usize> = r
        .ledger
        .iter()
        .filter(|e| e.chunk == 1 && e.group == ColumnGroup::Base)
        .map(|e| e.row)
        .collect();
    assert_eq!(base2, (5..45).collect());
    assert_eq!(r.ledger, reference_ledger(2, 45, 5, 80));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ledger_matches_rule(k in 1usize..=128, d_frac in 0.0f64..1.0, horizon in 1usize..300) {
        let d = ((k as f64) * d_frac) as usize;
        prop_assume!(d < k);
        let (r, q) = run_tagged(k, d, horizon);
        prop_assert_eq!(r.steps, horizon);
        prop_assert_eq!(q, horizon.div_ceil(k - d));
        prop_assert_eq!(r.queries, q);
        prop_assert_eq!(r.ledger, reference_ledger(q, k, d, horizon));
    }

    #[test]
    fn schedule_pairs_rows(k in 1usize..=128, d_frac in 0.0f64..1.0) {
        let d = ((k as f64) * d_frac) as usize;
        prop_assume!(d < k);
        let chunk = tagged_chunk(0, k);
        let s = schedule(&chunk, d).unwrap();
        prop_assert_eq!(s.len(), k - d);
        for (i, a) in s.iter().enumerate() {
            prop_assert!(a[..ARM_DIMS].iter().all(|&v| v == i as f64));
            prop_assert!(a[ARM_DIMS..].iter().all(|&v| v == (i + d) as f64));
        }
    }
}

#[test]
fn base_commands_follow_the_ledger() {
    // The executed base command at each step must be the tagged value named
    // by the ledger entry.
    let (k, d) = (10, 3);
    let spec = TaskSpec::wipe();
    let task = TaskInstance::new(&spec, 2);
    let mut policy = Tagged { k, queries: 0, arm: task.robot.proprio() };
    let cfg = RolloutConfig { k, d, horizon: 30, ..RolloutConfig::default() };
    let r = rollout(&mut policy, &task, &SimConfig::noise_free(), &cfg, 0);
    let bases: Vec<&Executed> = r.ledger.iter().filter(|e| e.group == ColumnGroup::Base).collect();
    for (t, e) in bases.iter().enumerate() {
        let omega = r.trace[t + 1].robot.base_vel.omega;
        let expect = ((e.chunk * 1000 + e.row) as f64) * 1e-9;
        assert!((omega - expect).abs() < 1e-15, "step {t}");
    }
}

#[test]
fn replay_reproduces_a_noise_free_recording() {
    let spec = TaskSpec::wipe();
    let sim = SimConfig::noise_free();
    let seed = 7;
    let rec = run_expert(&spec, &sim, seed).unwrap();
    assert!(rec.success);
    let task = TaskInstance::new(&spec, seed);
    for d in [0, 5] {
        let mut replay = ReplayPolicy::from_episode(&rec.episode, 45, d);
        let cfg = RolloutConfig { k: 45, d, horizon: rec.episode.len(), ..RolloutConfig::default() };
        let r = rollout(&mut replay, &task, &sim, &cfg, 0);
        let end = &r.last().robot.base;
        let want = &rec.last.robot.base;
        let err = (end.x - want.x).hypot(end.y - want.y);
        assert!(err < 1e-3, "d {d}: terminal error {err}");
    }
}

#[test]
fn replay_under_noise_drifts() {
    let spec = TaskSpec::wipe();
    let seed = 7;
    let rec = run_expert(&spec, &SimConfig::noise_free(), seed).unwrap();
    let task = TaskInstance::new(&spec, seed);
    let cfg = RolloutConfig { k: 45, d: 0, horizon: rec.episode.len(), ..RolloutConfig::default() };
    let mut total = 0.0;
    for n in 0..10 {
        let mut replay = ReplayPolicy::from_episode(&rec.episode, 45, 0);
        let r = rollout(&mut replay, &task, &SimConfig::default(), &cfg, 100 + n);
        let end = &r.last().robot.base;
        total += (end.x - rec.last.robot.base.x).hypot(end.y - rec.last.robot.base.y);
    }
    assert!(total / 10.0 > 0.01, "mean drift {}", total / 10.0);
}

#[test]
fn horizon_without_progress_fails_first_subtask() {
    let (r, _) = run_tagged(20, 0, 50);
    assert!(!r.success);
    assert_eq!(r.outcomes[0], SubtaskOutcome::Failure);
    assert!(r.outcomes[1..].iter().all(|o| *o == SubtaskOutcome::NotAttempted));
}

/// Full chunks with one NaN cell.
struct Broken {
    row: usize,
    col: usize,
}

impl ChunkPolicy for Broken {
    fn query(&mut self, _obs: &Observation) -> Result<Vec<ActionRow>, String> {
        let mut rows = vec![[0.0; 16]; 45];
        rows[self.row][self.col] = f64::NAN;
        Ok(rows)
    }
}

#[test]
fn non_finite_action_fails_with_diagnostic() {
    let task = TaskInstance::new(&TaskSpec::wipe(), 0);
    let mut p = Broken { row: 3, col: 2 };
    let r = rollout(&mut p, &task, &SimConfig::default(), &RolloutConfig::default(), 0);
    assert!(!r.success);
    assert_eq!(r.steps, 3);
    let msg = r.failure.unwrap();
    assert!(msg.contains("non-finite") && msg.contains("row 3") && msg.contains("column 2"), "{msg}");
}

#[test]
fn skipped_base_rows_are_never_read() {
    let task = TaskInstance::new(&TaskSpec::wipe(), 0);
    let mut p = Broken { row: 3, col: 15 };
    let cfg = RolloutConfig { horizon: 100, ..RolloutConfig::default() };
    let r = rollout(&mut p, &task, &SimConfig::default(), &cfg, 0);
    assert_eq!(r.failure, None);
    assert_eq!(r.steps, 100);
}

#[test]
fn short_chunks_are_rejected() {
    struct Short;
    impl ChunkPolicy for Short {
        fn query(&mut self, _obs: &Observation) -> Result<Vec<ActionRow>, String> {
            Ok(vec![[0.0; 16]; 3])
        }
    }
    let task = TaskInstance::new(&TaskSpec::wipe(), 0);
    let r = rollout(&mut Short, &task, &SimConfig::default(), &RolloutConfig::default(), 0);
    assert_eq!(r.steps, 0);
    assert!(r.failure.is_some());
}

#[test]
fn rollout_config_rejects_large_delay() {
    use wholebody_core::config::{ConfigKeys, KeyValues};
    let kv = KeyValues::parse("k = 10\nd = 10\n").unwrap();
    assert!(RolloutConfig::from_kv(&kv).is_err());
    let ok = KeyValues::parse("k = 10\nd = 9\n").unwrap();
    assert_eq!(RolloutConfig::from_kv(&ok).unwrap().d, 9);
    assert!(RolloutConfig::default().validate().is_ok());
}
