use std::sync::OnceLock;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wholebody_core::collect::collect;
use wholebody_core::config::{ConfigKeys, KeyValues};
use wholebody_core::cotrain::{align_cameras, full_action};
use wholebody_core::dataset::{compute_norm_stats, Episode, NormStats};
use wholebody_core::sim::{SimConfig, TaskSpec, ACTION_DIMS, ARM_DIMS};
use wholebody_core::vinn::encoder::{augment, cosine_loss, pool_view, POOLED_DIM};
use wholebody_core::vinn::{
    aggregate, assemble_key, encode, retrieve_chunk, select_k, train_encoder, Aggregation, Encoder, EncoderConfig,
    FeatureIndex, RetrievalConfig, VinnError, VinnPolicy,
};

fn corpora() -> &'static (Vec<Episode>, Vec<Episode>, NormStats) {
    static C: OnceLock<(Vec<Episode>, Vec<Episode>, NormStats)> = OnceLock::new();
    C.get_or_init(|| {
        let sim = SimConfig::default();
        let mobile = collect(&TaskSpec::wipe(), &sim, 4, 30).unwrap();
        let static_ = collect(&TaskSpec::static_pick(), &sim, 4, 40).unwrap();
        let stats = compute_norm_stats(&mobile).unwrap();
        (mobile, static_, stats)
    })
}

/// Random keys with deliberate duplicates so that ties occur.
fn random_index(n: usize, dim: usize, chunk_len: usize, seed: u64) -> FeatureIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random_bool(0.2) {
            let j = rng.random_range(0..i);
            keys.push(keys[j].clone());
        } else {
            // Coarse grid values make equal distances common as well.
            keys.push((0..dim).map(|_| rng.random_range(-4..=4) as f64 * 0.5).collect());
        }
    }
    let entries = keys.into_iter().enumerate().map(|(i, k)| {
        let chunk = vec![[i as f64; ACTION_DIMS]; chunk_len];
        // A permutation, so metadata is unique but out of insertion order.
        let p = (i * 7919) % n;
        let meta = ((p / 10) as u32, (p % 10) as u32);
        (k, chunk, meta)
    });
    FeatureIndex::from_entries(dim, chunk_len, entries).unwrap()
}

/// Exhaustive scan sorted by (distance, episode, step).
fn oracle(index: &FeatureIndex, key: &[f64], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, (u32, u32), usize)> = (0..index.len())
        .map(|i| {
            let d: f64 = index.key(i).iter().zip(key).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            (d, index.meta(i), i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|x| x.2).collect()
}

#[test]
fn knn_matches_exhaustive_scan() {
    let index = random_index(1000, 6, 2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ties = 0;
    for q in 0..100 {
        let key: Vec<f64> = if q % 2 == 0 {
            index.key(rng.random_range(0..index.len()))
        } else {
            (0..6).map(|_| rng.random_range(-4..=4) as f64 * 0.5).collect()
        };
        for k in [1, 5, 20] {
            let got: Vec<usize> = index.neighbors(&key, k).unwrap().iter().map(|n| n.entry).collect();
            let want = oracle(&index, &key, k);
            assert_eq!(got, want, "query {q} k {k}");
            let nn = index.neighbors(&key, k + 1).unwrap();
            if nn.windows(2).any(|w| w[0].distance == w[1].distance) {
                ties += 1;
            }
        }
    }
    assert!(ties > 50, "only {ties} queries had ties");
}

#[test]
fn neighbors_errors() {
    let index = random_index(10, 3, 1, 0);
    assert!(matches!(index.neighbors(&[0.0; 2], 1), Err(VinnError::Dimension { .. })));
    assert!(matches!(index.neighbors(&[0.0; 3], 11), Err(VinnError::TooFewEntries { .. })));
    assert!(matches!(index.neighbors(&[0.0; 3], 0), Err(VinnError::TooFewEntries { .. })));
    let empty = FeatureIndex::from_entries(3, 1, Vec::new()).unwrap();
    assert!(matches!(retrieve_chunk(&[0.0; 3], &empty, &RetrievalConfig::default()), Err(VinnError::EmptyIndex)));
}

#[test]
fn k_one_copies_the_nearest_chunk() {
    let index = random_index(200, 4, 3, 5);
    let cfg = RetrievalConfig { k_neighbors: 1, chunk_len: 3, ..RetrievalConfig::default() };
    for i in [0, 17, 150] {
        let key = index.key(i);
        let nearest = index.neighbors(&key, 1).unwrap()[0].entry;
        assert_eq!(index.distance(nearest, &key), 0.0);
        assert_eq!(retrieve_chunk(&key, &index, &cfg).unwrap(), index.chunk(nearest));
    }
    let mean = RetrievalConfig { aggregation: Aggregation::Mean, ..cfg };
    let key = index.key(3);
    assert_eq!(retrieve_chunk(&key, &index, &mean).unwrap(), index.chunk(index.neighbors(&key, 1).unwrap()[0].entry));
}

#[test]
fn aggregation_weights() {
    // Two entries at distances 1 and 3 from the origin, chunks 0 and 1.
    let entries = vec![
        (vec![1.0, 0.0], vec![[0.0; ACTION_DIMS]], (0, 0)),
        (vec![0.0, 3.0], vec![[1.0; ACTION_DIMS]], (0, 1)),
    ];
    let index = FeatureIndex::from_entries(2, 1, entries).unwrap();
    let nn = index.neighbors(&[0.0, 0.0], 2).unwrap();
    let soft = RetrievalConfig { chunk_len: 1, k_neighbors: 2, ..RetrievalConfig::default() };
    // T = mean distance = 2; weights exp(0), exp(-1).
    let w1 = (-1.0f64).exp();
    let want = w1 / (1.0 + w1);
    assert!((aggregate(&index, &nn, &soft)[0][0] - want).abs() < 1e-12);
    let fixed = RetrievalConfig { temperature: 0.5, ..soft.clone() };
    let w1 = (-4.0f64).exp();
    assert!((aggregate(&index, &nn, &fixed)[0][0] - w1 / (1.0 + w1)).abs() < 1e-12);
    let mean = RetrievalConfig { aggregation: Aggregation::Mean, ..soft };
    assert_eq!(aggregate(&index, &nn, &mean)[0][0], 0.5);
}

#[test]
fn zero_state_weight_ignores_proprio() {
    let (m, _, stats) = corpora();
    let enc = Encoder::new(8, 2, 1);
    let cfg = RetrievalConfig { state_weight: 0.0, ..RetrievalConfig::default() };
    let cams = align_cameras(&m[0].header).unwrap();
    let views = cams.map(|c| m[0].raster(10, c));
    let p = m[0].records[10].proprio_f64();
    let mut q = p;
    q[0] += 0.7;
    q[9] -= 0.3;
    assert_eq!(encode(views, &p, &enc, stats, &cfg), encode(views, &q, &enc, stats, &cfg));
}

#[test]
fn doubling_state_weight_doubles_the_proprio_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let p: [f64; ARM_DIMS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let a = RetrievalConfig { state_weight: 1.5, ..RetrievalConfig::default() };
    let b = RetrievalConfig { state_weight: 3.0, ..RetrievalConfig::default() };
    let ka = assemble_key([&f[0], &f[1], &f[2]], &p, &a);
    let kb = assemble_key([&f[0], &f[1], &f[2]], &p, &b);
    assert_eq!(ka[..15], kb[..15]);
    for i in 15..ka.len() {
        assert_eq!(kb[i], 2.0 * ka[i]);
    }
    let c = RetrievalConfig { camera_weights: [2.0, 0.0, 1.0], ..a };
    let kc = assemble_key([&f[0], &f[1], &f[2]], &p, &c);
    assert_eq!(kc[0], 2.0 * f[0][0]);
    assert_eq!(kc[5..10], [0.0; 5]);
}

/// Rank of `target` among `keys` for `query` (0 = nearest).
fn rank_of(keys: &[Vec<f64>], query: &[f64], target: usize) -> usize {
    let d = |k: &Vec<f64>| k.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let dt = d(&keys[target]);
    keys.iter().enumerate().filter(|(i, k)| *i != target && d(k) < dt).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn image_only_neighbors_never_lose_rank(seed in 0u64..10_000, w in 0.0f64..4.0, dw in 0.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feat = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let prop = |rng: &mut ChaCha8Rng| -> [f64; ARM_DIMS] { std::array::from_fn(|_| rng.random_range(-1.0..1.0)) };
        let qf = feat(&mut rng);
        let qp = prop(&mut rng);
        let mut cands: Vec<(Vec<Vec<f64>>, [f64; ARM_DIMS])> = (0..20).map(|_| (feat(&mut rng), prop(&mut rng))).collect();
        // Candidate 0 shares the query's proprioception.
        cands[0].1 = qp;
        let keys_for = |ws: f64| -> (Vec<Vec<f64>>, Vec<f64>) {
            let cfg = RetrievalConfig { state_weight: ws, ..RetrievalConfig::default() };
            let keys = cands.iter().map(|(f, p)| assemble_key([&f[0], &f[1], &f[2]], p, &cfg)).collect();
            (keys, assemble_key([&qf[0], &qf[1], &qf[2]], &qp, &cfg))
        };
        let (k1, q1) = keys_for(w);
        let (k2, q2) = keys_for(w + dw);
        prop_assert!(rank_of(&k2, &q2, 0) <= rank_of(&k1, &q1, 0));
    }

    #[test]
    fn knn_small_corpora(n in 1usize..60, dim in 1usize..5, seed in 0u64..1000, k_raw in 1usize..60) {
        let index = random_index(n, dim, 1, seed);
        let k = k_raw.min(n);
        let key = index.key(seed as usize % n);
        let got: Vec<usize> = index.neighbors(&key, k).unwrap().iter().map(|x| x.entry).collect();
        prop_assert_eq!(got, oracle(&index, &key, k));
    }
}

#[test]
fn built_index_finds_training_frames() {
    let (m, _, stats) = corpora();
    let enc = Encoder::new(16, 4, 2);
    let cfg = RetrievalConfig::default();
    let index = FeatureIndex::build(&m[..2], &enc, stats, &cfg).unwrap();
    assert_eq!(index.len(), m[0].len() + m[1].len());
    assert_eq!(index.key_dim(), 3 * 64 + ARM_DIMS);
    let cams = align_cameras(&m[1].header).unwrap();
    for t in [0, 50, m[1].len() - 1] {
        let key = encode(cams.map(|c| m[1].raster(t, c)), &m[1].records[t].proprio_f64(), &enc, stats, &cfg);
        let nn = index.neighbors(&key, 1).unwrap()[0];
        // Keys are stored in f32; the query is f64.
        assert!(nn.distance < 1e-5, "step {t}: {}", nn.distance);
        let chunk = index.chunk(nn.entry);
        let (e, s) = index.meta(nn.entry);
        let want = full_action(&m[e as usize], s as usize);
        for j in 0..ACTION_DIMS {
            assert!((chunk[0][j] - want[j]).abs() < 1e-6);
        }
    }
}

#[test]
fn select_k_prefers_lower_validation_loss() {
    let (m, _, stats) = corpora();
    let enc = Encoder::new(16, 4, 2);
    let cfg = RetrievalConfig::default();
    let index = FeatureIndex::build(&m[..3], &enc, stats, &cfg).unwrap();
    let (best, losses) = select_k(&index, &m[3..], &enc, stats, &cfg, &[1, 5, 20], 50).unwrap();
    assert_eq!(losses.len(), 3);
    let min = losses.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
    let first_min = losses.iter().find(|l| l.1 == min).unwrap().0;
    assert_eq!(best, first_min);
    assert!(matches!(
        select_k(&index, &m[3..], &enc, stats, &cfg, &[0], 50),
        Err(VinnError::NoCandidates)
    ));
}

#[test]
fn zero_epochs_return_initialisation() {
    let (m, s, _) = corpora();
    let cfg = EncoderConfig { epochs: 0, hidden: 8, patch_features: 2, seed: 4, ..EncoderConfig::default() };
    let out = train_encoder(m, s, &cfg).unwrap();
    assert_eq!(out.encoder, Encoder::from_config(&cfg));
    assert_eq!(out.steps, 0);
}

#[test]
fn encoder_training_is_deterministic() {
    let (m, s, _) = corpora();
    let cfg = EncoderConfig { epochs: 1, frame_stride: 40, batch_size: 16, seed: 4, ..EncoderConfig::default() };
    let a = train_encoder(m, s, &cfg).unwrap();
    let b = train_encoder(m, s, &cfg).unwrap();
    assert_eq!(a.encoder, b.encoder);
    assert_eq!(a.losses, b.losses);
}

/// Mean augmented-pair cosine similarity and mean per-feature variance over
/// held-out frames.
fn pair_stats(enc: &Encoder, episodes: &[Episode], cfg: &EncoderConfig) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut clean = Vec::new();
    for ep in episodes {
        let cams = align_cameras(&ep.header).unwrap();
        for t in (0..ep.len()).step_by(15) {
            for &c in &cams {
                let v = ep.raster(t, c);
                a.extend(augment(&v, cfg, &mut rng));
                b.extend(augment(&v, cfg, &mut rng));
                clean.extend(pool_view(&v));
            }
        }
    }
    let n = a.len() / POOLED_DIM;
    let za = enc.forward(&Array2::from_shape_vec((n, POOLED_DIM), a).unwrap());
    let zb = enc.forward(&Array2::from_shape_vec((n, POOLED_DIM), b).unwrap());
    let (loss, _) = cosine_loss(&za, &zb);
    let z = enc.forward(&Array2::from_shape_vec((n, POOLED_DIM), clean).unwrap());
    let var = z.var_axis(ndarray::Axis(0), 0.0).mean().unwrap();
    (1.0 - loss, var)
}

#[test]
fn training_improves_augmentation_agreement_without_collapse() {
    let (m, s, _) = corpora();
    let cfg = EncoderConfig { epochs: 10, frame_stride: 5, seed: 6, ..EncoderConfig::default() };
    let held_out = collect(&TaskSpec::wipe(), &SimConfig::default(), 2, 77).unwrap();
    let before = pair_stats(&Encoder::from_config(&cfg), &held_out, &cfg);
    let trained = train_encoder(m, s, &cfg).unwrap();
    let after = pair_stats(&trained.encoder, &held_out, &cfg);
    assert!(after.0 > before.0, "cosine {before:?} -> {after:?}");
    assert!(after.1 > 1e-4, "variance {}", after.1);
}

#[test]
fn encoder_config_validation() {
    assert!(EncoderConfig::default().validate().is_ok());
    let kv = KeyValues::parse("momentum = 1.5\n").unwrap();
    assert!(EncoderConfig::from_kv(&kv).is_err());
    let (m, s, _) = corpora();
    assert!(train_encoder(&m[..0], &s[..0], &EncoderConfig::default()).is_err());
}

#[test]
fn retrieval_config_round_trips() {
    let cfg = RetrievalConfig {
        k_neighbors: 7,
        state_weight: 2.5,
        camera_weights: [1.0, 0.5, 0.25],
        aggregation: Aggregation::Mean,
        temperature: 0.3,
        ..RetrievalConfig::default()
    };
    assert_eq!(RetrievalConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    assert!(RetrievalConfig::from_kv(&KeyValues::parse("k_neighbors = 0\n").unwrap()).is_err());
    assert!(RetrievalConfig::from_kv(&KeyValues::parse("camera_weights = 1,2\n").unwrap()).is_err());
}

#[test]
fn index_file_round_trips() {
    let (m, _, stats) = corpora();
    let enc = Encoder::new(8, 2, 5);
    let cfg = RetrievalConfig { chunk_len: 10, ..RetrievalConfig::default() };
    let index = FeatureIndex::build(&m[..1], &enc, stats, &cfg).unwrap();
    // Parameters go through f32 in the file.
    let mut enc32 = enc.clone();
    enc32.set_params(&enc.params().iter().map(|&v| f64::from(v as f32)).collect::<Vec<_>>()).unwrap();
    let policy = VinnPolicy { encoder: enc32, index, stats: stats.clone(), cfg };
    let bytes = policy.encode_file();
    let back = VinnPolicy::decode_file(&bytes).unwrap();
    assert_eq!(back, policy);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.wbix");
    policy.write(&path).unwrap();
    assert_eq!(VinnPolicy::read(&path).unwrap(), policy);
    assert!(VinnPolicy::decode_file(&bytes[..bytes.len() - 4]).is_err());
}
