use proptest::prelude::*;

use wholebody_core::cotrain::{MixtureConfig, Sampler};
use wholebody_core::dataset::{compute_norm_stats, read_episode, Manifest, Origin};
use wholebody_core::executor::{rollout, ReplayPolicy, RolloutConfig};
use wholebody_core::sim::{NoiseConfig, Side, SimConfig, TaskInstance, TaskSpec};
use wholebody_teleop::cli::header_lines;
use wholebody_teleop::protocol::{
    ArmCommand, BaseCommand, EeDelta, GripperToggle, RecordFlag, ServerMessage, TeleopCommand,
};
use wholebody_teleop::session::{Session, SessionConfig, MAX_EE_STEP};

fn session(sim: SimConfig, dir: &std::path::Path) -> Session {
    let cfg = SessionConfig {
        sim,
        views: false,
        ..SessionConfig::new(TaskSpec::wipe(), dir)
    };
    Session::new(cfg).unwrap()
}

fn lag_only() -> SimConfig {
    SimConfig {
        noise: NoiseConfig { tau: 0.1, ..NoiseConfig::zero() },
        ..SimConfig::default()
    }
}

fn drive(seq: u64, v: f64, omega: f64) -> TeleopCommand {
    TeleopCommand {
        base: Some(BaseCommand { v, omega }),
        ..TeleopCommand::idle(seq)
    }
}

#[test]
fn static_tasks_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Session::new(SessionConfig::new(TaskSpec::static_pick(), dir.path())).is_err());
}

#[test]
fn idle_session_holds_pose() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(lag_only(), dir.path());
    let start = s.sim().robot;
    for _ in 0..30 {
        s.tick(None);
    }
    assert_eq!(s.sim().robot.base, start.base);
    assert_eq!(s.sim().robot.proprio(), start.proprio());

    for i in 0..20 {
        s.tick(Some(&drive(i, 0.5, 0.0)));
    }
    let moving = s.sim().robot.base_vel.v;
    assert!(moving > 0.4);
    let mut prev = moving;
    for _ in 0..60 {
        s.tick(None);
        let v = s.sim().robot.base_vel.v;
        assert!(v <= prev);
        prev = v;
    }
    assert!(prev < 1e-3, "{prev}");
}

#[test]
fn stale_sequence_numbers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(lag_only(), dir.path());
    s.tick(Some(&drive(5, 0.1, 0.0)));
    let out = s.tick(Some(&drive(5, 0.9, 0.0)));
    assert!(matches!(out[0], ServerMessage::Error { .. }));
    let ServerMessage::Frame(f) = out.last().unwrap() else { panic!() };
    assert_eq!(f.seq, Some(5));
    assert!(s.sim().robot.lag.v < 0.2);
    let out = s.tick(Some(&drive(6, 0.0, 0.0)));
    assert_eq!(out.len(), 1);
}

#[test]
fn ee_deltas_move_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(lag_only(), dir.path());
    let geom = s.sim().cfg.geometry();
    let cmd = TeleopCommand {
        left: Some(ArmCommand::Ee(EeDelta { dx: 0.02, dy: -0.01 })),
        ..TeleopCommand::idle(0)
    };
    let a = s.resolve(Some(&cmd));
    assert_eq!(a, s.resolve(Some(&cmd)));
    let before = s.sim().robot.left.joints;
    let mut after = [0.0; 6];
    after.copy_from_slice(&a.arm_targets[..6]);
    let e0 = geom.ee_body(&before, Side::Left);
    let e1 = geom.ee_body(&after, Side::Left);
    assert!((e1[0] - e0[0] - 0.02).abs() < 1e-4 && (e1[1] - e0[1] + 0.01).abs() < 1e-4);
    // The right arm is untouched.
    assert_eq!(a.arm_targets[7..13], s.sim().robot.right.joints);

    let far = TeleopCommand {
        left: Some(ArmCommand::Ee(EeDelta { dx: 3.0, dy: 4.0 })),
        ..TeleopCommand::idle(0)
    };
    let mut q = [0.0; 6];
    q.copy_from_slice(&s.resolve(Some(&far)).arm_targets[..6]);
    let e2 = geom.ee_body(&q, Side::Left);
    assert!((e2[0] - e0[0]).hypot(e2[1] - e0[1]) <= MAX_EE_STEP + 1e-4);
}

#[test]
fn gripper_flags_toggle() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(lag_only(), dir.path());
    let g = s.sim().robot.left.gripper;
    let cmd = TeleopCommand {
        gripper: Some(GripperToggle { left: true, right: false }),
        ..TeleopCommand::idle(0)
    };
    let a = s.resolve(Some(&cmd));
    assert_eq!(a.arm_targets[6], if g < 0.5 { 1.0 } else { 0.0 });
    assert_eq!(a.arm_targets[13], s.sim().robot.right.gripper);
}

fn arm() -> impl Strategy<Value = Option<ArmCommand>> {
    prop_oneof![
        Just(None),
        (-10.0f64..10.0, -10.0f64..10.0).prop_map(|(dx, dy)| Some(ArmCommand::Ee(EeDelta { dx, dy }))),
        prop::array::uniform6(-10.0f64..10.0).prop_map(|q| Some(ArmCommand::Joints(q))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn state_stays_within_limits(cmds in prop::collection::vec(
        ((-50.0f64..50.0, -50.0f64..50.0), arm(), arm(), any::<bool>()), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(SimConfig::noise_free(), dir.path());
        let cfg = s.sim().cfg.clone();
        for (i, ((v, w), l, r, g)) in cmds.into_iter().enumerate() {
            let cmd = TeleopCommand {
                seq: i as u64,
                base: Some(BaseCommand { v, omega: w }),
                left: l,
                right: r,
                gripper: Some(GripperToggle { left: g, right: !g }),
                record: None,
            };
            s.tick(Some(&cmd));
            let robot = s.sim().robot;
            prop_assert!(robot.base_vel.v.abs() <= cfg.v_max + 1e-12);
            prop_assert!(robot.base_vel.omega.abs() <= cfg.omega_max + 1e-12);
            for side in Side::BOTH {
                let arm = robot.arm(side);
                prop_assert!(arm.joints.iter().all(|q| q.abs() <= cfg.joint_limit + 1e-12));
                prop_assert!((0.0..=1.0).contains(&arm.gripper));
            }
        }
    }
}

/// A short whole-body demonstration: drive, turn, reach and toggle a gripper.
fn script(i: u64) -> TeleopCommand {
    let mut c = drive(i + 1, 0.4 * ((i as f64) * 0.05).sin().abs(), 0.3 * ((i as f64) * 0.03).cos());
    if i % 3 == 0 {
        c.left = Some(ArmCommand::Ee(EeDelta { dx: 0.004, dy: 0.002 }));
    }
    if i == 40 {
        c.gripper = Some(GripperToggle { left: true, right: false });
    }
    c
}

#[test]
fn recordings_hold_the_applied_commands_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(SimConfig::noise_free(), dir.path());
    // Wander before recording; the recording restarts the scene.
    for i in 0..10 {
        s.tick(Some(&drive(i, 0.3, 0.2)));
    }
    let mut applied = Vec::new();
    for i in 0..120 {
        let mut c = script(100 + i);
        if i == 0 {
            c.record = Some(RecordFlag::Start);
            s.tick(Some(&c));
            applied.push(None);
            continue;
        }
        applied.push(Some(s.resolve(Some(&c))));
        s.tick(Some(&c));
    }
    assert!(s.is_recording());
    let end = s.sim().robot.base;
    let out = s.tick(Some(&TeleopCommand { record: Some(RecordFlag::Stop), ..TeleopCommand::idle(10_000) }));
    let ServerMessage::Recorded { path, steps } = &out[0] else { panic!("{out:?}") };
    assert_eq!(*steps, 120);
    assert!(!s.is_recording());

    let ep = read_episode(path).unwrap();
    assert_eq!(ep.origin(), Origin::Mobile);
    assert_eq!(ep.len(), 120);
    for (t, a) in applied.iter().enumerate().skip(1) {
        let a = a.unwrap();
        let r = &ep.records[t];
        assert_eq!(r.action_base, vec![a.base_cmd.v as f32, a.base_cmd.omega as f32], "step {t}");
        assert_eq!(r.action_arms, a.arm_targets.map(|x| x as f32), "step {t}");
    }

    // Header fields echo verbatim.
    let text = header_lines(&ep.header);
    assert!(text.contains(&format!("seed = {}\n", ep.header.seed)));
    assert!(text.contains("origin = mobile\n") && text.contains("task = wipe\n"));

    // Replaying the file from its scene seed reproduces the trajectory.
    let task = TaskInstance::new(&TaskSpec::wipe(), ep.header.seed);
    let mut replay = ReplayPolicy::from_episode(&ep, 45, 0);
    let cfg = RolloutConfig { d: 0, horizon: ep.len(), ..RolloutConfig::default() };
    let r = rollout(&mut replay, &task, &SimConfig::noise_free(), &cfg, 0);
    let got = r.last().robot.base;
    assert!((got.x - end.x).hypot(got.y - end.y) < 1e-3);

    // The training pipeline accepts it as a mobile demonstration.
    let stats = compute_norm_stats(std::slice::from_ref(&ep)).unwrap();
    let mix = MixtureConfig { rho_static: 0.0, ..MixtureConfig::default() };
    let mut sampler = Sampler::new(std::slice::from_ref(&ep), &[], &mix, &stats).unwrap();
    assert_eq!(sampler.sample().origin, Origin::Mobile);

    let manifest = Manifest::read(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.paths.len(), 1);
}

#[test]
fn finish_finalises_an_open_recording() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(lag_only(), dir.path());
    for i in 0..2 {
        s.tick(Some(&TeleopCommand { record: Some(RecordFlag::Start), ..drive(10 * i, 0.2, 0.0) }));
        for j in 1..6 {
            s.tick(Some(&drive(10 * i + j, 0.2, 0.0)));
        }
        let msg = s.finish().unwrap().unwrap();
        assert!(matches!(msg, ServerMessage::Recorded { steps: 6, .. }));
    }
    assert!(s.finish().unwrap().is_none());
    assert_eq!(s.written().len(), 2);
    let manifest = Manifest::read(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.paths, s.written());
    assert_ne!(read_episode(&s.written()[0]).unwrap().header.seed, read_episode(&s.written()[1]).unwrap().header.seed);
}

#[test]
fn frames_carry_views_when_enabled() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Session::new(SessionConfig::new(TaskSpec::wipe(), dir.path())).unwrap();
    let out = s.tick(None);
    let ServerMessage::Frame(f) = &out[0] else { panic!() };
    let v = f.views.as_ref().unwrap();
    assert_eq!((v.top.width, v.top.height), (64, 64));
    use base64::Engine;
    let bytes = base64::engine::general_purpose::STANDARD.decode(&v.lwrist.data).unwrap();
    assert_eq!(bytes.len(), v.lwrist.width * v.lwrist.height);
    assert_eq!(f.subtasks.len(), s.task().sub_tasks.len());
    assert_eq!(f.objects.len(), s.sim().world.objects.len());
}
