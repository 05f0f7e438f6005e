use proptest::prelude::*;

use wholebody_core::bench::{
    mean_stderr, order_line, replay_drift, rerun, turn_profile, Bench, BenchConfig, DriftConfig, DriftStats, Regime,
    Report, SuccessTable,
};
use wholebody_core::collect::collect;
use wholebody_core::config::{ConfigKeys, KeyValues};
use wholebody_core::dataset::compute_norm_stats;
use wholebody_core::nn::{train, TrainConfig};
use wholebody_core::sim::SubtaskOutcome::{self, Failure as F, NotAttempted as N, Success as T};
use wholebody_core::sim::{NoiseConfig, SimConfig, TaskSpec};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

/// Outcome list of an episode that completed `done` of `n` sub-tasks.
fn outcomes(done: usize, n: usize) -> Vec<SubtaskOutcome> {
    (0..n)
        .map(|i| match i.cmp(&done) {
            std::cmp::Ordering::Less => T,
            std::cmp::Ordering::Equal => F,
            std::cmp::Ordering::Greater => N,
        })
        .collect()
}

#[test]
fn wipe_wine_row() {
    let t = SuccessTable::from_counts(names(3), 20, &[20, 19, 19]).unwrap();
    assert_eq!(t.conditional(0), Some(100.0));
    assert_eq!(t.conditional(1), Some(95.0));
    assert_eq!(t.conditional(2), Some(100.0));
    assert_eq!(t.whole_rate(), 95.0);
    assert!(t.product_identity_holds());
}

#[test]
fn all_fail_at_first_subtask() {
    let eps: Vec<_> = (0..20).map(|_| outcomes(0, 3)).collect();
    let t = SuccessTable::from_outcomes(names(3), &eps).unwrap();
    assert_eq!(t.conditional(0), Some(0.0));
    assert_eq!(t.conditional(1), None);
    assert_eq!(t.conditional(2), None);
    assert_eq!(t.whole_rate(), 0.0);
    assert_eq!(t.progress_histogram(), vec![20, 0, 0, 0]);
}

#[test]
fn inconsistent_outcomes_are_rejected() {
    assert!(SuccessTable::from_outcomes(names(3), &[vec![F, T, N]]).is_err());
    assert!(SuccessTable::from_outcomes(names(3), &[vec![T, N, N]]).is_err());
    assert!(SuccessTable::from_outcomes(names(3), &[vec![T, T]]).is_err());
    assert!(SuccessTable::from_counts(names(2), 5, &[3, 4]).is_err());
    assert!(SuccessTable::from_counts(names(2), 5, &[6, 1]).is_err());
}

proptest! {
    #[test]
    fn product_equals_direct_count(n in 1usize..6, done in prop::collection::vec(0usize..6, 1..60)) {
        let done: Vec<usize> = done.into_iter().map(|d| d.min(n)).collect();
        let eps: Vec<_> = done.iter().map(|&d| outcomes(d, n)).collect();
        let t = SuccessTable::from_outcomes(names(n), &eps).unwrap();
        let full = done.iter().filter(|&&d| d == n).count();
        prop_assert_eq!(t.whole_count(), full);
        prop_assert!(t.product_identity_holds());
        // The reduced fractions agree, so both routes give the same float.
        let direct = SuccessTable::from_counts(vec!["all".into()], eps.len(), &[full]).unwrap();
        prop_assert_eq!(t.whole_rate(), direct.whole_rate());
        let rate = 100.0 * full as f64 / eps.len() as f64;
        prop_assert!((t.whole_rate() - rate).abs() < 1e-9);
        for j in 0..=n {
            prop_assert_eq!(t.progress_histogram()[j], done.iter().filter(|&&d| d == j).count());
        }
    }
}

#[test]
fn merge_adds_counts() {
    let mut a = SuccessTable::from_counts(names(2), 10, &[5, 2]).unwrap();
    let b = SuccessTable::from_counts(names(2), 10, &[7, 7]).unwrap();
    a.merge(&b);
    assert_eq!(a, SuccessTable::from_counts(names(2), 20, &[12, 9]).unwrap());
}

#[test]
fn mean_stderr_examples() {
    assert_eq!(mean_stderr(&[]), (0.0, 0.0));
    assert_eq!(mean_stderr(&[4.0]), (4.0, 0.0));
    let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
    assert_eq!(m, 2.0);
    assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

#[test]
fn report_text_round_trips() {
    let mut config = KeyValues::default();
    config.push("a", 1);
    config.push("b.c", "x,y");
    let r = Report {
        kind: "mixture".into(),
        config,
        results: vec![("best".into(), "5.0000".into())],
        columns: vec!["kind".into(), "v".into()],
        rows: vec![vec!["cell".into(), "1".into()], vec!["mean".into(), "-".into()]],
    };
    let text = r.to_string();
    assert!(text.starts_with("# report: mixture\n# config: a = 1\n"));
    assert_eq!(Report::parse(&text).unwrap(), r);
    assert!(Report::parse("# columns: a,b\n1\n").is_err());
    assert!(Report::parse("# report: x\n1,2\n").is_err());
}

#[test]
fn bench_config_round_trips() {
    let cfg = BenchConfig::default();
    assert!(cfg.validate().is_ok());
    let kv = cfg.to_kv();
    assert_eq!(BenchConfig::from_kv(&kv).unwrap(), cfg);
    assert_eq!(kv.get("demo_counts"), Some("25,35,50"));
    assert_eq!(kv.get("train.lr"), Some("0.001"));
    let bad = KeyValues::parse("seeds = 1,2\n").unwrap();
    assert!(BenchConfig::from_kv(&bad).is_err());
    let bad = KeyValues::parse("rhos = 1.5\n").unwrap();
    assert!(BenchConfig::from_kv(&bad).is_err());
    let bad = KeyValues::parse("task.kind = static-pick\n").unwrap();
    assert!(BenchConfig::from_kv(&bad).is_err());
    let bad = KeyValues::parse("nonsense = 1\n").unwrap();
    assert!(BenchConfig::from_kv(&bad).is_err());
}

#[test]
fn drift_stats_of_points_on_a_line() {
    // Five points along direction 30 degrees, spaced 0.1 apart.
    let a = 30f64.to_radians();
    let pts: Vec<[f64; 2]> = (-2..=2).map(|i| [0.1 * i as f64 * a.cos() + 1.0, 0.1 * i as f64 * a.sin()]).collect();
    let s = DriftStats::from_offsets(&pts);
    assert!((s.centroid[0] - 1.0).abs() < 1e-12 && s.centroid[1].abs() < 1e-12);
    assert!((s.axis_angle - a).abs() < 1e-9);
    assert!((s.extent_major - 0.4).abs() < 1e-12);
    assert!(s.spread_minor < 1e-7);
    // Population std of {-0.2, -0.1, 0, 0.1, 0.2}.
    assert!((s.spread_major - 0.02f64.sqrt()).abs() < 1e-12);
    let mean_err: f64 = pts.iter().map(|p| p[0].hypot(p[1])).sum::<f64>() / 5.0;
    assert!((s.mean_error - mean_err).abs() < 1e-15);
}

#[test]
fn turn_profile_is_half_a_circle() {
    let cfg = DriftConfig::default();
    let p = turn_profile(&cfg, 0.02);
    assert_eq!(p.len(), 314);
    let turned: f64 = p.iter().map(|a| a.base_cmd.omega * 0.02).sum();
    assert!((turned - std::f64::consts::PI).abs() < 0.01);
    assert!(p.iter().all(|a| a.arm_targets[..6].iter().all(|&q| q == 0.0)));
}

#[test]
fn replay_drift_signatures() {
    let r = replay_drift(&DriftConfig::default());
    let zero = &r.run("zero").unwrap().stats;
    let default = &r.run("default").unwrap().stats;
    assert!(zero.mean_error < 1e-3, "{}", zero.mean_error);
    assert!(default.mean_error >= 0.05);
    assert!(default.mean_error >= 5.0 * zero.mean_error);
    assert!(r.run("bias+").unwrap().stats.centroid[0] > 0.0);
    assert!(r.run("bias-").unwrap().stats.centroid[0] < 0.0);
    assert_eq!(r.run("default").unwrap().offsets.len(), 20);
}

#[test]
fn drift_bias_alone_shifts_left() {
    // Only the injected bias, no scatter: a left turn that over-rotates swings
    // the forward-reaching arm to the left of the reference.
    let cfg = DriftConfig {
        noise: NoiseConfig { bias_std_v: 0.0, bias_std_omega: 0.0, sigma_v: 0.0, sigma_omega: 0.0, ..NoiseConfig::default() },
        replays: 3,
        ..DriftConfig::default()
    };
    let r = replay_drift(&cfg);
    let plus = &r.run("bias+").unwrap();
    assert!(plus.stats.spread_major < 1e-12);
    assert!(plus.offsets[0][0] > 0.05);
    let minus = &r.run("bias-").unwrap();
    assert!(minus.offsets[0][0] < -0.05);
}

#[test]
fn drift_report_reruns_exactly() {
    let cfg = DriftConfig { replays: 5, seed: 9, ..DriftConfig::default() };
    let text = replay_drift(&cfg).report.to_string();
    assert!(text.contains("# config: replays = 5\n"));
    assert_eq!(rerun(&text).unwrap().to_string(), text);
    assert!(rerun("# report: unknown\n# columns: a\n").is_err());
}

fn tiny_config() -> BenchConfig {
    let mut cfg = BenchConfig::default();
    cfg.train = TrainConfig {
        lr: 1e-3,
        steps: 8,
        pretrain_steps: 4,
        batch_size: 4,
        pooled_side: 4,
        view_hidden: 8,
        proprio_hidden: 4,
        trunk_hidden: 8,
        ..TrainConfig::default()
    };
    cfg.rollout.horizon = 50;
    cfg.rollout.eval_episodes = 2;
    cfg.demo_counts = vec![0, 2];
    cfg.seeds = vec![2, 2];
    cfg.static_demos = 2;
    cfg.rhos = vec![0.0, 0.5];
    cfg.mixture_demos = 2;
    cfg.mixture_seeds = 2;
    cfg.compare_demos = 2;
    cfg.compare_seeds = 2;
    cfg
}

#[test]
fn tiny_sweeps_run_end_to_end() {
    let mut bench = Bench::new(tiny_config()).unwrap();
    let eff = bench.efficiency_sweep().unwrap();
    let zero = eff.find(Regime::Cotrain, 0).unwrap();
    assert_eq!(zero.flag.as_deref(), Some("untrainable"));
    assert_eq!(zero.mean, 0.0);
    // Two regimes x two counts, each with two seed rows and a mean row.
    assert_eq!(eff.report.rows.len(), 2 * 2 * 3);
    for c in &eff.cells {
        assert!(c.pooled.product_identity_holds());
        for r in &c.runs {
            assert!(r.table.product_identity_holds());
            assert_eq!(r.table.episodes, 2);
        }
    }

    let mix = bench.mixture_sweep().unwrap();
    assert_eq!(mix.cells[0].regime, Regime::NoCotrain);
    let cmp = bench.pretrain_comparison().unwrap();
    assert_eq!(cmp.cells.len(), 3);
    let order = cmp.report.result("order").unwrap();
    for regime in ["cotrain", "pretrain", "no-cotrain"] {
        assert!(order.contains(regime));
    }
    assert_eq!(order, order_line(&cmp.cells));
    // Memoised cells are shared across sweeps.
    let a = eff.find(Regime::Cotrain, 2).unwrap();
    let b = cmp.find(Regime::Cotrain, 2).unwrap();
    assert_eq!(a.runs[0].final_loss, b.runs[0].final_loss);
    assert_eq!(mix.cells[1].runs[1].final_loss, a.runs[1].final_loss);

    // The embedded config regenerates the same text.
    let text = mix.report.to_string();
    assert_eq!(rerun(&text).unwrap().to_string(), text);
}

#[test]
fn rho_zero_matches_mobile_only_training() {
    let sim = SimConfig::default();
    let mobile = collect(&TaskSpec::wipe(), &sim, 2, 1).unwrap();
    let static_ = collect(&TaskSpec::static_pick(), &sim, 2, 2).unwrap();
    let stats = compute_norm_stats(&mobile).unwrap();
    let cfg = TrainConfig { rho_static: 0.0, ..tiny_config().train };
    let a = train(&mobile, &static_, &stats, &cfg).unwrap();
    let b = train(&mobile, &[], &stats, &cfg).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.net.params(), b.net.params());
}

#[test]
fn cells_reject_missing_demos() {
    let mut bench = Bench::new(tiny_config()).unwrap();
    assert!(bench.cell(Regime::NoCotrain, 0, 0.0, 0).is_err());
    assert!(bench.cell(Regime::NoCotrain, 3, 0.0, 0).is_err());
}

#[test]
fn order_line_ranks_by_mean() {
    let mut bench = Bench::new(tiny_config()).unwrap();
    let mut cmp = bench.pretrain_comparison().unwrap();
    cmp.cells[0].mean = 10.0;
    cmp.cells[1].mean = 50.0;
    cmp.cells[2].mean = 10.0;
    let line = order_line(&cmp.cells);
    assert!(line.starts_with("pretrain 50.0000 > "), "{line}");
    assert!(line.contains(" = "));
}
