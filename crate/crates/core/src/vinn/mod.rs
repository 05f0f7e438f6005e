//! Retrieval policy: encoded views plus weighted proprioception as keys,
//! exact nearest neighbours, and chunk-valued retrieval.

pub mod encoder;

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::config::{format_list, invalid, parse_list, parse_value, ConfigError, ConfigKeys, KeyValues};
use crate::cotrain::{align_cameras, chunk_at, full_action, CotrainError};
use crate::dataset::{Episode, NormStats};
use crate::nn::checkpoint::{read_stats, required, write_stats, CheckpointError, Container};
use crate::sim::{Observation, RasterView, ACTION_DIMS, ARM_DIMS};

pub use encoder::{train_encoder, Encoder, EncoderConfig, EncoderError, EncoderOutcome};

pub const INDEX_MAGIC: &[u8; 4] = b"WBIX";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    #[default]
    Softmax,
    Mean,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Softmax => "softmax",
            Aggregation::Mean => "mean",
        })
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(Aggregation::Softmax),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(format!("unknown aggregation `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalConfig {
    pub k_neighbors: usize,
    pub chunk_len: usize,
    pub state_weight: f64,
    /// Top, left wrist, right wrist.
    pub camera_weights: [f64; 3],
    pub aggregation: Aggregation,
    /// Softmax temperature; 0 means the mean of the k distances.
    pub temperature: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            chunk_len: 100,
            state_weight: 5.0,
            camera_weights: [1.0; 3],
            aggregation: Aggregation::Softmax,
            temperature: 0.0,
        }
    }
}

impl ConfigKeys for RetrievalConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "k_neighbors" => self.k_neighbors = parse_value(key, value)?,
            "chunk_len" => self.chunk_len = parse_value(key, value)?,
            "state_weight" => self.state_weight = parse_value(key, value)?,
            "camera_weights" => {
                let w: Vec<f64> = parse_list(key, value)?;
                self.camera_weights = w
                    .try_into()
                    .map_err(|_| invalid(key, "needs three comma-separated weights"))?;
            }
            "aggregation" => self.aggregation = parse_value(key, value)?,
            "temperature" => self.temperature = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.push("k_neighbors", self.k_neighbors);
        kv.push("chunk_len", self.chunk_len);
        kv.push("state_weight", self.state_weight);
        kv.push("camera_weights", format_list(&self.camera_weights));
        kv.push("aggregation", self.aggregation);
        kv.push("temperature", self.temperature);
        kv
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.k_neighbors == 0 {
            return Err(invalid("k_neighbors", "must be >= 1"));
        }
        if self.chunk_len == 0 {
            return Err(invalid("chunk_len", "must be >= 1"));
        }
        if !(self.state_weight >= 0.0) || !self.state_weight.is_finite() {
            return Err(invalid("state_weight", "must be finite and >= 0"));
        }
        if self.camera_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("camera_weights", "must be finite and >= 0"));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(invalid("temperature", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum VinnError {
    #[error("key has {got} values, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("empty index")]
    EmptyIndex,
    #[error("k = {k} exceeds index size {size}")]
    TooFewEntries { k: usize, size: usize },
    #[error("no candidate k values")]
    NoCandidates,
    #[error(transparent)]
    Data(#[from] CotrainError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    File(#[from] CheckpointError),
}

/// `[w_c·f(top); w_c·f(lwrist); w_c·f(rwrist); w_s·proprio]`.
pub fn assemble_key(features: [&[f64]; 3], proprio: &[f64; ARM_DIMS], cfg: &RetrievalConfig) -> Vec<f64> {
    let mut key = Vec::with_capacity(features.iter().map(|f| f.len()).sum::<usize>() + ARM_DIMS);
    for (f, w) in features.iter().zip(cfg.camera_weights) {
        key.extend(f.iter().map(|v| w * v));
    }
    key.extend(proprio.iter().map(|v| cfg.state_weight * v));
    key
}

/// Key for three aligned views and raw proprioception.
pub fn encode(
    views: [RasterView<'_>; 3],
    proprio: &[f64; ARM_DIMS],
    encoder: &Encoder,
    stats: &NormStats,
    cfg: &RetrievalConfig,
) -> Vec<f64> {
    let f: Vec<Vec<f64>> = views.iter().map(|v| encoder.encode_view(v)).collect();
    assemble_key([&f[0], &f[1], &f[2]], &stats.normalize_proprio(proprio), cfg)
}

pub fn encode_observation(obs: &Observation, encoder: &Encoder, stats: &NormStats, cfg: &RetrievalConfig) -> Vec<f64> {
    encode(obs.views(), &obs.proprio, encoder, stats, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub entry: usize,
    pub distance: f64,
    pub episode: u32,
    pub step: u32,
}

/// Keys with their action chunks (physical units). Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureIndex {
    key_dim: usize,
    chunk_len: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
    meta: Vec<(u32, u32)>,
}

impl FeatureIndex {
    /// Builds from explicit entries. Keys and values are stored as f32.
    pub fn from_entries(
        key_dim: usize,
        chunk_len: usize,
        entries: impl IntoIterator<Item = (Vec<f64>, Vec<[f64; ACTION_DIMS]>, (u32, u32))>,
    ) -> Result<Self, VinnError> {
        let mut index = Self {
            key_dim,
            chunk_len,
            keys: Vec::new(),
            values: Vec::new(),
            meta: Vec::new(),
        };
        for (key, chunk, meta) in entries {
            if key.len() != key_dim {
                return Err(VinnError::Dimension {
                    expected: key_dim,
                    got: key.len(),
                });
            }
            if chunk.len() != chunk_len {
                return Err(VinnError::Dimension {
                    expected: chunk_len,
                    got: chunk.len(),
                });
            }
            index.keys.extend(key.iter().map(|&v| v as f32));
            index.values.extend(chunk.iter().flatten().map(|&v| v as f32));
            index.meta.push(meta);
        }
        Ok(index)
    }

    /// One entry per step of every episode; chunks past the end repeat the
    /// final action.
    pub fn build(
        episodes: &[Episode],
        encoder: &Encoder,
        stats: &NormStats,
        cfg: &RetrievalConfig,
    ) -> Result<Self, VinnError> {
        ConfigKeys::validate(cfg)?;
        let key_dim = 3 * encoder.feature_dim() + ARM_DIMS;
        let mut entries = Vec::new();
        for (e, ep) in episodes.iter().enumerate() {
            let cams = align_cameras(&ep.header)?;
            let actions: Vec<_> = (0..ep.len()).map(|t| full_action(ep, t)).collect();
            for t in 0..ep.len() {
                let views = cams.map(|c| ep.raster(t, c));
                let key = encode(views, &ep.records[t].proprio_f64(), encoder, stats, cfg);
                let (chunk, _) = chunk_at(&actions, t, cfg.chunk_len);
                entries.push((key, chunk, (e as u32, t as u32)));
            }
        }
        Self::from_entries(key_dim, cfg.chunk_len, entries)
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    pub fn key(&self, i: usize) -> Vec<f64> {
        self.keys[i * self.key_dim..(i + 1) * self.key_dim]
            .iter()
            .map(|&v| f64::from(v))
            .collect()
    }

    pub fn chunk(&self, i: usize) -> Vec<[f64; ACTION_DIMS]> {
        self.values[i * self.chunk_len * ACTION_DIMS..(i + 1) * self.chunk_len * ACTION_DIMS]
            .chunks_exact(ACTION_DIMS)
            .map(|c| std::array::from_fn(|j| f64::from(c[j])))
            .collect()
    }

    pub fn meta(&self, i: usize) -> (u32, u32) {
        self.meta[i]
    }

    pub fn distance(&self, i: usize, key: &[f64]) -> f64 {
        self.keys[i * self.key_dim..(i + 1) * self.key_dim]
            .iter()
            .zip(key)
            .map(|(&a, b)| (f64::from(a) - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// The `k` nearest entries by Euclidean distance, ties broken by lower
    /// `(episode, step)`, in increasing order.
    pub fn neighbors(&self, key: &[f64], k: usize) -> Result<Vec<Neighbor>, VinnError> {
        if self.is_empty() {
            return Err(VinnError::EmptyIndex);
        }
        if key.len() != self.key_dim {
            return Err(VinnError::Dimension {
                expected: self.key_dim,
                got: key.len(),
            });
        }
        if k == 0 || k > self.len() {
            return Err(VinnError::TooFewEntries { k, size: self.len() });
        }
        let mut all: Vec<Neighbor> = (0..self.len())
            .map(|i| Neighbor {
                entry: i,
                distance: self.distance(i, key),
                episode: self.meta[i].0,
                step: self.meta[i].1,
            })
            .collect();
        let order = |a: &Neighbor, b: &Neighbor| -> Ordering {
            a.distance
                .total_cmp(&b.distance)
                .then((a.episode, a.step).cmp(&(b.episode, b.step)))
        };
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, order);
            all.truncate(k);
        }
        all.sort_by(order);
        Ok(all)
    }

    pub fn encode_file(&self, encoder: &Encoder, stats: &NormStats, cfg: &RetrievalConfig) -> Vec<u8> {
        let mut kv = KeyValues::default();
        kv.push("kind", "vinn");
        kv.push("entries", self.len());
        kv.push("key_dim", self.key_dim);
        kv.push("encoder.hidden", encoder.hidden());
        kv.push("encoder.patch_features", encoder.patch_features());
        for (k, v) in cfg.to_kv().iter() {
            kv.push(k, v);
        }
        write_stats(&mut kv, stats);
        let mut values: Vec<f32> = encoder.params().iter().map(|&v| v as f32).collect();
        values.extend_from_slice(&self.keys);
        values.extend_from_slice(&self.values);
        for &(e, s) in &self.meta {
            values.push(e as f32);
            values.push(s as f32);
        }
        Container { header: kv, values }.encode(INDEX_MAGIC)
    }
}

/// Softmax(−d/T) or plain mean of the neighbours' chunks.
pub fn aggregate(index: &FeatureIndex, neighbors: &[Neighbor], cfg: &RetrievalConfig) -> Vec<[f64; ACTION_DIMS]> {
    let weights: Vec<f64> = match cfg.aggregation {
        Aggregation::Mean => vec![1.0; neighbors.len()],
        Aggregation::Softmax => {
            let t = if cfg.temperature > 0.0 {
                cfg.temperature
            } else {
                neighbors.iter().map(|n| n.distance).sum::<f64>() / neighbors.len() as f64
            };
            let d0 = neighbors[0].distance;
            if t > 0.0 {
                neighbors.iter().map(|n| (-(n.distance - d0) / t).exp()).collect()
            } else {
                vec![1.0; neighbors.len()]
            }
        }
    };
    let total: f64 = weights.iter().sum();
    let mut out = vec![[0.0; ACTION_DIMS]; index.chunk_len()];
    for (n, w) in neighbors.iter().zip(&weights) {
        for (o, row) in out.iter_mut().zip(index.chunk(n.entry)) {
            for (o, v) in o.iter_mut().zip(row) {
                *o += w / total * v;
            }
        }
    }
    out
}

pub fn retrieve_chunk(key: &[f64], index: &FeatureIndex, cfg: &RetrievalConfig) -> Result<Vec<[f64; ACTION_DIMS]>, VinnError> {
    let nn = index.neighbors(key, cfg.k_neighbors)?;
    Ok(aggregate(index, &nn, cfg))
}

/// Chooses `k` by mean normalised L1 between retrieved and true chunks on
/// every `stride`-th step of the validation episodes. Ties go to the
/// smaller `k`.
pub fn select_k(
    index: &FeatureIndex,
    validation: &[Episode],
    encoder: &Encoder,
    stats: &NormStats,
    cfg: &RetrievalConfig,
    candidates: &[usize],
    stride: usize,
) -> Result<(usize, Vec<(usize, f64)>), VinnError> {
    let usable: Vec<usize> = candidates.iter().copied().filter(|&k| k >= 1 && k <= index.len()).collect();
    if usable.is_empty() {
        return Err(VinnError::NoCandidates);
    }
    let mut sums = vec![0.0; usable.len()];
    let mut n = 0usize;
    for ep in validation {
        let cams = align_cameras(&ep.header)?;
        let actions: Vec<_> = (0..ep.len()).map(|t| full_action(ep, t)).collect();
        for t in (0..ep.len()).step_by(stride.max(1)) {
            let key = encode(cams.map(|c| ep.raster(t, c)), &ep.records[t].proprio_f64(), encoder, stats, cfg);
            let (truth, _) = chunk_at(&actions, t, index.chunk_len());
            let kmax = *usable.iter().max().expect("non-empty");
            let nn = index.neighbors(&key, kmax)?;
            for (s, &k) in sums.iter_mut().zip(&usable) {
                let pred = aggregate(index, &nn[..k], cfg);
                *s += chunk_l1(&pred, &truth, stats);
            }
            n += 1;
        }
    }
    let losses: Vec<(usize, f64)> = usable.iter().zip(&sums).map(|(&k, s)| (k, s / n.max(1) as f64)).collect();
    let best = losses
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("non-empty")
        .0;
    Ok((best, losses))
}

fn chunk_l1(pred: &[[f64; ACTION_DIMS]], truth: &[[f64; ACTION_DIMS]], stats: &NormStats) -> f64 {
    let mut s = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = (stats.normalize_action(p), stats.normalize_action(t));
        s += p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    s / (pred.len() * ACTION_DIMS) as f64
}

/// Encoder, index, statistics and retrieval settings.
#[derive(Clone, Debug, PartialEq)]
pub struct VinnPolicy {
    pub encoder: Encoder,
    pub index: FeatureIndex,
    pub stats: NormStats,
    pub cfg: RetrievalConfig,
}

impl VinnPolicy {
    pub fn predict(&self, obs: &Observation) -> Result<Vec<[f64; ACTION_DIMS]>, VinnError> {
        let key = encode_observation(obs, &self.encoder, &self.stats, &self.cfg);
        retrieve_chunk(&key, &self.index, &self.cfg)
    }

    pub fn encode_file(&self) -> Vec<u8> {
        self.index.encode_file(&self.encoder, &self.stats, &self.cfg)
    }

    pub fn decode_file(bytes: &[u8]) -> Result<Self, VinnError> {
        let c = Container::decode(bytes, INDEX_MAGIC)?;
        let kv = &c.header;
        let num = |k: &str| -> Result<usize, VinnError> { Ok(parse_value(k, required(kv, k)?)?) };
        if required(kv, "kind")? != "vinn" {
            return Err(CheckpointError::Header("not a retrieval index".into()).into());
        }
        let mut cfg = RetrievalConfig::default();
        kv.apply_known(&mut cfg)?;
        let (hidden, features) = (num("encoder.hidden")?, num("encoder.patch_features")?);
        let (entries, key_dim) = (num("entries")?, num("key_dim")?);
        if hidden > 4096 || features > 4096 {
            return Err(CheckpointError::Header("encoder too large".into()).into());
        }
        let mut encoder = Encoder::zeros(hidden, features);
        if key_dim != 3 * encoder.feature_dim() + ARM_DIMS {
            return Err(CheckpointError::Header("key_dim does not match the encoder".into()).into());
        }
        let np = encoder.num_params();
        let sizes = [np, entries * key_dim, entries * cfg.chunk_len * ACTION_DIMS, 2 * entries];
        let expected = sizes.iter().try_fold(0usize, |acc, s| acc.checked_add(*s));
        if expected != Some(c.values.len()) {
            return Err(CheckpointError::Header(format!(
                "{} values, header implies {:?}",
                c.values.len(),
                expected
            ))
            .into());
        }
        let (params, rest) = c.values.split_at(np);
        encoder.set_params(&params.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()).map_err(CheckpointError::from)?;
        let (keys, rest) = rest.split_at(sizes[1]);
        let (values, meta) = rest.split_at(sizes[2]);
        let mut meta_pairs = Vec::with_capacity(entries);
        for m in meta.chunks_exact(2) {
            let valid = |v: f32| v >= 0.0 && v.fract() == 0.0 && v <= 16_777_216.0;
            if !valid(m[0]) || !valid(m[1]) {
                return Err(CheckpointError::Header("bad entry metadata".into()).into());
            }
            meta_pairs.push((m[0] as u32, m[1] as u32));
        }
        Ok(Self {
            encoder,
            index: FeatureIndex {
                key_dim,
                chunk_len: cfg.chunk_len,
                keys: keys.to_vec(),
                values: values.to_vec(),
                meta: meta_pairs,
            },
            stats: read_stats(kv)?,
            cfg,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), VinnError> {
        let path = path.as_ref();
        fs::write(path, self.encode_file()).map_err(|source| {
            CheckpointError::Io {
                path: path.to_path_buf(),
                source,
            }
            .into()
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, VinnError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode_file(&bytes)
    }
}
