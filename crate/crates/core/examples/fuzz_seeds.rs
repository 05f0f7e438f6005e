use std::fs;
use std::path::Path;

use wholebody_core::bench::{replay_drift, BenchConfig, DriftConfig};
use wholebody_core::collect::collect;
use wholebody_core::config::ConfigKeys;
use wholebody_core::dataset::{compute_norm_stats, encode_episode, Episode};
use wholebody_core::nn::{encode_checkpoint, Arch, Checkpoint, PolicyNet};
use wholebody_core::sim::{SimConfig, TaskSpec};
use wholebody_core::vinn::{train_encoder, EncoderConfig, FeatureIndex, RetrievalConfig, VinnPolicy};

fn put(dir: &Path, target: &str, name: &str, bytes: &[u8]) {
    let d = dir.join(target);
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join(name), bytes).unwrap();
}

fn short(mut ep: Episode, n: usize) -> Episode {
    ep.records.truncate(n);
    ep.header.steps = n;
    ep
}

fn main() {
    let dir = Path::new(std::env::args().nth(1).as_deref().unwrap_or("fuzz/corpus")).to_path_buf();
    let sim = SimConfig::default();
    let mobile: Vec<Episode> = collect(&TaskSpec::wipe(), &sim, 2, 1).unwrap().into_iter().map(|e| short(e, 3)).collect();
    let static_: Vec<Episode> = collect(&TaskSpec::static_pick(), &sim, 1, 2).unwrap().into_iter().map(|e| short(e, 2)).collect();
    put(&dir, "episode", "mobile", &encode_episode(&mobile[0]).unwrap());
    put(&dir, "episode", "static", &encode_episode(&static_[0]).unwrap());
    put(&dir, "episode", "empty", &encode_episode(&short(mobile[1].clone(), 0)).unwrap());

    let stats = compute_norm_stats(&mobile).unwrap();
    let arch = Arch { chunk_len: 2, pooled_side: 2, view_hidden: 2, proprio_hidden: 2, trunk_hidden: 3, ..Arch::default() };
    let ck = Checkpoint { net: PolicyNet::new(&arch, 0), stats: stats.clone(), step: 7, seed: 0 };
    put(&dir, "checkpoint", "tiny", &encode_checkpoint(&ck));

    let ecfg = EncoderConfig { epochs: 0, rho_static: 0.0, ..EncoderConfig::default() };
    let enc = train_encoder(&mobile, &[], &ecfg).unwrap().encoder;
    let rcfg = RetrievalConfig { chunk_len: 2, ..RetrievalConfig::default() };
    let index = FeatureIndex::build(&mobile, &enc, &stats, &rcfg).unwrap();
    let policy = VinnPolicy { encoder: enc, index, stats, cfg: rcfg };
    put(&dir, "index", "tiny", &policy.encode_file());

    put(&dir, "config", "bench", BenchConfig::default().to_kv().to_string().as_bytes());
    put(&dir, "config", "drift", DriftConfig::default().to_kv().to_string().as_bytes());
    put(&dir, "config", "retrieval", RetrievalConfig::default().to_kv().to_string().as_bytes());
    put(&dir, "config", "comments", b"# overrides\ntrain.steps = 10\n\ndemo_counts = 1, 2\n");

    put(&dir, "manifest", "relative", b"# corpus\nwipe_0000.maep\nwipe_0001.maep\n");
    put(&dir, "manifest", "absolute", b"/data/a.maep\n\n  sub/b.maep  \n");

    let drift = replay_drift(&DriftConfig { replays: 2, ..DriftConfig::default() });
    put(&dir, "report", "drift", drift.report.to_string().as_bytes());

    put(&dir, "command", "full", br#"{"seq": 7, "base": {"v": 0.3, "omega": -0.2}, "left": {"ee": {"dx": 0.01, "dy": 0.0}}, "right": {"joints": [0.0, 0.05, 0.0, 0.0, 0.0, 0.0]}, "gripper": {"left": true, "right": false}, "record": "start"}"#);
    put(&dir, "command", "idle", br#"{"seq": 1}"#);
    put(&dir, "command", "stop", br#"{"seq": 2, "record": "stop"}"#);
}
