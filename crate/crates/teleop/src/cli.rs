//! Command line front end.

use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use wholebody_core::bench::{replay_drift, rerun, success_table, Bench, BenchConfig, DriftConfig};
use wholebody_core::collect::{collect, write_corpus};
use wholebody_core::config::ConfigKeys;
use wholebody_core::dataset::{compute_norm_stats, read_episode, Episode, EpisodeHeader, Manifest};
use wholebody_core::executor::{ChunkPolicy, RolloutConfig};
use wholebody_core::nn::{read_checkpoint, train, write_checkpoint, BcPolicy, Checkpoint, TrainConfig};
use wholebody_core::sim::{SimConfig, TaskKind, TaskSpec};
use wholebody_core::vinn::{train_encoder, EncoderConfig, FeatureIndex, RetrievalConfig, VinnPolicy};

use crate::server::{serve, ServerConfig, ENDPOINT};
use crate::session::SessionConfig;

pub const DATA_ENV: &str = "WHOLEBODY_DATA";

#[derive(Debug, Parser)]
#[command(name = "wholebody", version, about = "Whole-body mobile manipulation toolkit")]
pub struct Cli {
    /// Root of episode corpora, checkpoints and reports.
    #[arg(long, global = true, env = DATA_ENV, default_value = "data")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Bc,
    Vinn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Efficiency,
    Mixture,
    Pretrain,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record scripted expert demonstrations.
    Collect {
        #[arg(long, default_value = "wipe")]
        task: String,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Task file with `key = value` overrides.
        #[arg(long)]
        task_config: Option<PathBuf>,
        #[arg(long)]
        noise_free: bool,
        /// Defaults to `<data-dir>/<task>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve one interactive teleoperation session over WebSocket.
    Teleop {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "wipe")]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50.0)]
        rate: f64,
        #[arg(long)]
        max_ticks: Option<u64>,
        #[arg(long)]
        noise_free: bool,
        /// Leave rendered views out of state frames.
        #[arg(long)]
        no_views: bool,
        /// Defaults to `<data-dir>/teleop`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a BC policy or build a retrieval index.
    Train {
        #[arg(long, value_enum)]
        algo: Algo,
        /// Static fraction of each batch; 0 trains on mobile data only.
        #[arg(long)]
        rho: Option<f64>,
        /// Use the first N mobile demonstrations.
        #[arg(long)]
        demos: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "wipe")]
        task: String,
        /// Mobile corpus directory or manifest; defaults to `<data-dir>/<task>`.
        #[arg(long)]
        mobile: Option<PathBuf>,
        /// Static corpus directory or manifest; defaults to `<data-dir>/static-pick`.
        #[arg(long = "static")]
        static_: Option<PathBuf>,
        /// Training (bc) or encoder (vinn) configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Retrieval configuration file (vinn).
        #[arg(long)]
        retrieval: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint or index and print its success table.
    Eval {
        /// A `.wbck` checkpoint or `.wbix` index.
        policy: PathBuf,
        #[arg(long, default_value = "wipe")]
        task: String,
        /// Rollout configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        noise_free: bool,
    },
    /// Run a training sweep and write its report.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
        /// Bench configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Open-loop replay drift of a half-circle turn.
    ReplayDrift {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate a report from its embedded configuration.
    Rerun {
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print an episode file's header and a short summary.
    Inspect { path: PathBuf },
}

fn task_spec(name: &str, file: Option<&Path>) -> anyhow::Result<TaskSpec> {
    let kind: TaskKind = name.parse().map_err(anyhow::Error::msg)?;
    let mut spec = TaskSpec::for_kind(kind);
    if let Some(f) = file {
        spec = TaskSpec::from_file(f)?;
        if spec.kind != kind {
            bail!("{} describes task `{}`, not `{kind}`", f.display(), spec.kind);
        }
    }
    Ok(spec)
}

fn sim_config(noise_free: bool) -> SimConfig {
    if noise_free {
        SimConfig::noise_free()
    } else {
        SimConfig::default()
    }
}

/// Accepts a corpus directory (holding `manifest.txt`) or a manifest file.
fn load_corpus(path: &Path, limit: Option<usize>, what: &str) -> anyhow::Result<Vec<Episode>> {
    let manifest_path = if path.is_dir() { path.join("manifest.txt") } else { path.to_path_buf() };
    if !manifest_path.is_file() {
        bail!(
            "{what} corpus not found: {} has no manifest (run `wholebody collect` first)",
            path.display()
        );
    }
    let mut manifest = Manifest::read(&manifest_path)?;
    if let Some(n) = limit {
        if n > manifest.paths.len() {
            bail!("{n} demos requested but {} lists {}", manifest_path.display(), manifest.paths.len());
        }
        manifest = manifest.prefix(n);
    }
    if manifest.paths.is_empty() {
        bail!("{what} corpus at {} is empty", path.display());
    }
    Ok(manifest.load()?)
}

/// Header fields one per line, in file order, as `key = value`.
pub fn header_lines(h: &EpisodeHeader) -> String {
    let cams: Vec<String> = h.cameras.iter().map(|c| format!("{}:{}x{}", c.name, c.width, c.height)).collect();
    format!(
        "version = {}\ntask = {}\norigin = {}\ncontrol_hz = {}\narm_dims = {}\nbase_dims = {}\ncameras = {}\nsteps = {}\nseed = {}\n",
        h.version,
        h.task,
        h.origin,
        h.control_hz,
        h.arm_dims,
        h.base_dims,
        cams.join(","),
        h.steps,
        h.seed
    )
}

pub fn inspect_text(ep: &Episode) -> String {
    let mut out = header_lines(&ep.header);
    let n = ep.len();
    out.push_str(&format!("duration_s = {:.2}\n", n as f64 / ep.header.control_hz.max(1) as f64));
    if let (Some(first), Some(last)) = (ep.records.first(), ep.records.last()) {
        let path: f64 = ep
            .records
            .windows(2)
            .map(|w| ((w[1].base_pose[0] - w[0].base_pose[0]) as f64).hypot((w[1].base_pose[1] - w[0].base_pose[1]) as f64))
            .sum();
        out.push_str(&format!(
            "base_start = {:.4},{:.4},{:.4}\nbase_end = {:.4},{:.4},{:.4}\nbase_path_m = {:.4}\n",
            first.base_pose[0], first.base_pose[1], first.base_pose[2], last.base_pose[0], last.base_pose[1], last.base_pose[2], path
        ));
    }
    out
}

fn write_or_print(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let data = cli.data_dir;
    match cli.command {
        Command::Collect { task, n, seed, task_config, noise_free, out } => {
            let spec = task_spec(&task, task_config.as_deref())?;
            let dir = out.unwrap_or_else(|| data.join(spec.kind.name()));
            let eps = collect(&spec, &sim_config(noise_free), n, seed)?;
            let manifest = write_corpus(&eps, &dir, spec.kind.name())?;
            println!("wrote {} episodes and manifest.txt to {}", manifest.paths.len(), dir.display());
        }
        Command::Teleop { host, port, task, seed, rate, max_ticks, noise_free, no_views, out } => {
            let spec = task_spec(&task, None)?;
            let session = SessionConfig {
                task: spec,
                sim: sim_config(noise_free),
                seed,
                out_dir: out.unwrap_or_else(|| data.join("teleop")),
                views: !no_views,
            };
            if !(rate > 0.0) {
                bail!("--rate must be positive");
            }
            let listener = TcpListener::bind((host.as_str(), port)).with_context(|| format!("binding {host}:{port}"))?;
            eprintln!("listening on ws://{}{ENDPOINT}", listener.local_addr()?);
            let summary = serve(&listener, &ServerConfig { session, rate_hz: rate, max_ticks })?;
            println!(
                "ticks {} received {} coalesced {} rejected {} late {}",
                summary.ticks, summary.received, summary.coalesced, summary.rejected, summary.late_ticks
            );
            for p in summary.episodes {
                println!("recorded {}", p.display());
            }
        }
        Command::Train { algo, rho, demos, seed, steps, task, mobile, static_, config, retrieval, out } => {
            let spec = task_spec(&task, None)?;
            if spec.kind.is_static() {
                bail!("the target task must be mobile");
            }
            let mobile_dir = mobile.unwrap_or_else(|| data.join(spec.kind.name()));
            let static_dir = static_.unwrap_or_else(|| data.join(TaskKind::StaticPick.name()));
            let mobile = load_corpus(&mobile_dir, demos, "mobile")?;
            let stats = compute_norm_stats(&mobile)?;
            match algo {
                Algo::Bc => {
                    let mut cfg = match &config {
                        Some(p) => TrainConfig::from_file(p)?,
                        None => TrainConfig::default(),
                    };
                    cfg.seed = seed;
                    if let Some(r) = rho {
                        cfg.rho_static = r;
                    }
                    if let Some(s) = steps {
                        cfg.steps = s;
                    }
                    cfg.validate()?;
                    let static_eps = if cfg.rho_static > 0.0 {
                        load_corpus(&static_dir, None, "static")?
                    } else {
                        Vec::new()
                    };
                    let outcome = train(&mobile, &static_eps, &stats, &cfg)?;
                    let first = outcome.losses.first().copied().unwrap_or(0.0);
                    let last = outcome.losses.last().copied().unwrap_or(0.0);
                    let path = out.unwrap_or_else(|| data.join("models").join(format!("bc-rho{}-seed{seed}.wbck", cfg.rho_static)));
                    if let Some(dir) = path.parent() {
                        std::fs::create_dir_all(dir)?;
                    }
                    let ck = Checkpoint { net: outcome.net, stats, step: outcome.steps, seed };
                    write_checkpoint(&ck, &path)?;
                    println!("trained {} steps, loss {first:.4} -> {last:.4}; wrote {}", outcome.steps, path.display());
                }
                Algo::Vinn => {
                    let mut cfg = match &config {
                        Some(p) => EncoderConfig::from_file(p)?,
                        None => EncoderConfig::default(),
                    };
                    cfg.seed = seed;
                    if let Some(r) = rho {
                        cfg.rho_static = r;
                    }
                    cfg.validate()?;
                    let static_eps = if cfg.rho_static > 0.0 {
                        load_corpus(&static_dir, None, "static")?
                    } else {
                        Vec::new()
                    };
                    let rcfg = match &retrieval {
                        Some(p) => RetrievalConfig::from_file(p)?,
                        None => RetrievalConfig::default(),
                    };
                    let enc = train_encoder(&mobile, &static_eps, &cfg)?;
                    let index = FeatureIndex::build(&mobile, &enc.encoder, &stats, &rcfg)?;
                    let policy = VinnPolicy { encoder: enc.encoder, index, stats, cfg: rcfg };
                    let path = out.unwrap_or_else(|| data.join("models").join(format!("vinn-rho{}-seed{seed}.wbix", cfg.rho_static)));
                    if let Some(dir) = path.parent() {
                        std::fs::create_dir_all(dir)?;
                    }
                    policy.write(&path)?;
                    println!("indexed {} frames; wrote {}", policy.index.len(), path.display());
                }
            }
        }
        Command::Eval { policy, task, config, episodes, d, noise_free } => {
            let spec = task_spec(&task, None)?;
            let mut rcfg = match &config {
                Some(p) => RolloutConfig::from_file(p)?,
                None => RolloutConfig::default(),
            };
            if let Some(n) = episodes {
                rcfg.eval_episodes = n;
            }
            if let Some(d) = d {
                rcfg.d = d;
            }
            rcfg.validate()?;
            let mut pol: Box<dyn ChunkPolicy> = if policy.extension().is_some_and(|e| e == "wbix") {
                Box::new(VinnPolicy::read(&policy)?)
            } else {
                let ck = read_checkpoint(&policy)?;
                Box::new(BcPolicy { net: ck.net, stats: ck.stats })
            };
            let table = success_table(pol.as_mut(), &spec, &sim_config(noise_free), &rcfg)?;
            for (i, name) in table.names.iter().enumerate() {
                let rate = table.conditional(i).map_or("-".to_string(), |r| format!("{r:.1}"));
                println!("{name}: {}/{} = {rate}", table.successes[i], table.attempts(i));
            }
            println!("whole: {}/{} = {:.1}", table.whole_count(), table.episodes, table.whole_rate());
        }
        Command::Sweep { kind, config, out } => {
            let cfg = match &config {
                Some(p) => BenchConfig::from_file(p)?,
                None => BenchConfig::default(),
            };
            let mut bench = Bench::new(cfg)?;
            bench.verbose = true;
            let sweep = match kind {
                SweepKind::Efficiency => bench.efficiency_sweep()?,
                SweepKind::Mixture => bench.mixture_sweep()?,
                SweepKind::Pretrain => bench.pretrain_comparison()?,
            };
            write_or_print(&sweep.report.to_string(), out.as_deref())?;
        }
        Command::ReplayDrift { config, out } => {
            let cfg = match &config {
                Some(p) => DriftConfig::from_file(p)?,
                None => DriftConfig::default(),
            };
            write_or_print(&replay_drift(&cfg).report.to_string(), out.as_deref())?;
        }
        Command::Rerun { report, out } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            write_or_print(&rerun(&text)?.to_string(), out.as_deref())?;
        }
        Command::Inspect { path } => {
            let ep = read_episode(&path)?;
            print!("{}", inspect_text(&ep));
        }
    }
    Ok(())
}
