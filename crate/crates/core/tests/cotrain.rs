use std::sync::OnceLock;

use wholebody_core::collect::collect;
use wholebody_core::cotrain::{align_cameras, chunk_at, full_action, pad_static_action, CotrainError, MixtureConfig, Sampler};
use wholebody_core::dataset::{compute_norm_stats, DatasetError, Episode, NormStats, Origin, FRONT_CAMERA};
use wholebody_core::sim::{SimConfig, TaskSpec, ARM_DIMS};

fn corpora() -> &'static (Vec<Episode>, Vec<Episode>, NormStats) {
    static C: OnceLock<(Vec<Episode>, Vec<Episode>, NormStats)> = OnceLock::new();
    C.get_or_init(|| {
        let sim = SimConfig::default();
        let mobile = collect(&TaskSpec::wipe(), &sim, 4, 10).unwrap();
        let static_ = collect(&TaskSpec::static_pick(), &sim, 4, 20).unwrap();
        let stats = compute_norm_stats(&mobile).unwrap();
        (mobile, static_, stats)
    })
}

#[test]
fn pad_examples() {
    let arms: Vec<f64> = (0..14).map(|i| i as f64 * 0.1).collect();
    let a = pad_static_action(&arms).unwrap();
    assert_eq!(&a[..14], &arms[..]);
    assert_eq!(a[14..], [0.0, 0.0]);
    assert!(matches!(
        pad_static_action(&arms[..13]),
        Err(CotrainError::WrongLength { expected: 14, got: 13 })
    ));
    let mut bad = arms.clone();
    bad[3] = f64::NAN;
    assert_eq!(pad_static_action(&bad), Err(CotrainError::NonFinite));
}

#[test]
fn static_episodes_drop_the_front_view() {
    let (mobile, static_, _) = corpora();
    let s = &static_[0].header;
    assert!(s.camera_index(FRONT_CAMERA).is_some());
    let cams = align_cameras(s).unwrap();
    assert!(!cams.contains(&s.camera_index(FRONT_CAMERA).unwrap()));
    assert_eq!(cams.map(|c| s.cameras[c].name.clone()), ["top", "lwrist", "rwrist"]);
    assert_eq!(align_cameras(&mobile[0].header).unwrap(), [0, 1, 2]);
    let mut missing = s.clone();
    missing.cameras.remove(1);
    assert!(matches!(align_cameras(&missing), Err(CotrainError::MissingView(_))));
}

#[test]
fn mixture_fraction_follows_rho() {
    let (m, s, stats) = corpora();
    for rho in [0.3, 0.5, 0.7] {
        let cfg = MixtureConfig {
            rho_static: rho,
            chunk_len: 1,
            seed: 5,
            ..MixtureConfig::default()
        };
        let mut sampler = Sampler::new(m, s, &cfg, stats).unwrap();
        let n = 160_000;
        let hits = (0..n).filter(|_| sampler.sample().origin == Origin::Static).count();
        let frac = hits as f64 / n as f64;
        assert!((frac - rho).abs() <= 0.02, "rho {rho}: {frac}");
    }
}

#[test]
fn extreme_mixtures_use_one_corpus() {
    let (m, s, stats) = corpora();
    let only_mobile = MixtureConfig { rho_static: 0.0, ..MixtureConfig::default() };
    let mut a = Sampler::new(m, &[], &only_mobile, stats).unwrap();
    assert!((0..500).all(|_| a.sample().origin == Origin::Mobile));
    let only_static = MixtureConfig { rho_static: 1.0, ..MixtureConfig::default() };
    let mut b = Sampler::new(&[], s, &only_static, stats).unwrap();
    assert!((0..500).all(|_| b.sample().origin == Origin::Static));
    assert_eq!(
        Sampler::new(m, &[], &MixtureConfig::default(), stats).err(),
        Some(CotrainError::EmptyCorpus(Origin::Static))
    );
    assert_eq!(
        Sampler::new(&[], s, &MixtureConfig::default(), stats).err(),
        Some(CotrainError::EmptyCorpus(Origin::Mobile))
    );
}

#[test]
fn corpora_must_hold_their_origin() {
    let (m, s, stats) = corpora();
    assert!(matches!(
        Sampler::new(s, m, &MixtureConfig::default(), stats).err(),
        Some(CotrainError::WrongOrigin { .. })
    ));
}

#[test]
fn static_samples_denormalize_to_zero_base() {
    let (m, s, stats) = corpora();
    let cfg = MixtureConfig { rho_static: 0.5, seed: 9, ..MixtureConfig::default() };
    let mut sampler = Sampler::new(m, s, &cfg, stats).unwrap();
    let mut seen = 0;
    for _ in 0..2000 {
        let sample = sampler.sample();
        if sample.origin != Origin::Static {
            continue;
        }
        seen += 1;
        for row in &sample.target {
            let a = stats.denormalize_action(row);
            assert_eq!(a[14], 0.0);
            assert_eq!(a[15], 0.0);
        }
    }
    assert!(seen > 500);
}

#[test]
fn normalization_round_trips_the_mobile_corpus() {
    let (m, _, stats) = corpora();
    for ep in m {
        for t in 0..ep.len() {
            let a = full_action(ep, t);
            let back = stats.denormalize_action(&stats.normalize_action(&a));
            for i in 0..16 {
                assert!((back[i] - a[i]).abs() <= 1e-9, "episode step {t} dim {i}");
            }
        }
    }
}

#[test]
fn stats_come_from_mobile_data_only() {
    let (m, s, stats) = corpora();
    assert!(stats.source.starts_with("mobile:wipe"));
    assert!(matches!(compute_norm_stats(s), Err(DatasetError::StaticInStats { index: 0 })));
    let mut mixed = m.clone();
    mixed.push(s[0].clone());
    assert!(compute_norm_stats(&mixed).is_err());
}

#[test]
fn stats_match_a_direct_oracle() {
    let (m, _, stats) = corpora();
    let mut sum = [0.0f64; 16];
    let mut n = 0.0;
    for ep in m {
        for t in 0..ep.len() {
            let a = full_action(ep, t);
            for i in 0..16 {
                sum[i] += a[i];
            }
            n += 1.0;
        }
    }
    for i in 0..16 {
        let mean = sum[i] / n;
        assert!((stats.action_mean[i] - mean).abs() < 1e-9);
        let mut var = 0.0;
        for ep in m {
            for t in 0..ep.len() {
                var += (full_action(ep, t)[i] - mean).powi(2);
            }
        }
        let std = (var / n).sqrt();
        let s = stats.action_std[i];
        // Stored scale is the power of two nearest the std in log space.
        assert_eq!(s.log2().fract(), 0.0);
        assert!((s.log2() - std.log2()).abs() <= 0.5 + 1e-9 || std < 1e-6);
    }
}

#[test]
fn sampler_is_deterministic() {
    let (m, s, stats) = corpora();
    let cfg = MixtureConfig { seed: 3, ..MixtureConfig::default() };
    let mut a = Sampler::new(m, s, &cfg, stats).unwrap();
    let mut b = Sampler::new(m, s, &cfg, stats).unwrap();
    for _ in 0..50 {
        assert_eq!(a.next_batch(), b.next_batch());
    }
}

#[test]
fn samples_carry_the_right_chunk() {
    let (m, s, stats) = corpora();
    let cfg = MixtureConfig { seed: 4, chunk_len: 45, ..MixtureConfig::default() };
    let mut sampler = Sampler::new(m, s, &cfg, stats).unwrap();
    for _ in 0..200 {
        let x = sampler.sample();
        let ep = if x.origin == Origin::Static { &s[x.episode] } else { &m[x.episode] };
        for (r, row) in x.target.iter().enumerate() {
            let t = (x.step + r).min(ep.len() - 1);
            assert_eq!(*row, stats.normalize_action(&full_action(ep, t)));
            assert_eq!(x.pad[r], x.step + r >= ep.len());
        }
        assert_eq!(x.proprio, stats.normalize_proprio(&ep.records[x.step].proprio_f64()));
    }
}

#[test]
fn chunk_at_examples() {
    let rows = [1, 2, 3];
    assert_eq!(chunk_at(&rows, 0, 2), (vec![1, 2], vec![false, false]));
    assert_eq!(chunk_at(&rows, 2, 3), (vec![3, 3, 3], vec![false, true, true]));
}

#[test]
fn denormalized_error_scales_with_std() {
    // Predictions held in normalised space: scaling every std by c scales the
    // physical error by c.
    let stats = NormStats::identity();
    let mut wide = stats.clone();
    let c = 4.0;
    wide.action_std = stats.action_std.map(|s| s * c);
    let pred = [0.3; 16];
    let target = [-0.2; 16];
    let err = |st: &NormStats| -> f64 {
        let p = st.denormalize_action(&pred);
        let t = st.denormalize_action(&target);
        p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum()
    };
    assert!((err(&wide) - c * err(&stats)).abs() < 1e-12);
    assert_eq!(ARM_DIMS, 14);
}
