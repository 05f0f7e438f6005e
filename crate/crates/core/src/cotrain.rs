//! Mixture sampling over mobile and static demonstration corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{invalid, ConfigError};
use crate::config_keys;
use crate::dataset::{Episode, EpisodeHeader, NormStats, Origin, POLICY_CAMERAS};
use crate::derive_seed;
use crate::sim::{RasterView, ACTION_DIMS, ARM_DIMS};

#[derive(Debug, Error, PartialEq)]
pub enum CotrainError {
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("non-finite arm action")]
    NonFinite,
    #[error("episode is missing the `{0}` camera")]
    MissingView(String),
    #[error("the {0} corpus is empty but rho_static requires it")]
    EmptyCorpus(Origin),
    #[error("{origin} corpus contains an episode with origin {found}")]
    WrongOrigin { origin: Origin, found: Origin },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureConfig {
    pub rho_static: f64,
    pub batch_size: usize,
    pub chunk_len: usize,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            rho_static: 0.5,
            batch_size: 16,
            chunk_len: 45,
            seed: 0,
        }
    }
}

fn check_mixture(c: &MixtureConfig) -> Result<(), ConfigError> {
    if !(0.0..=1.0).contains(&c.rho_static) {
        return Err(invalid("rho_static", "must lie in [0, 1]"));
    }
    if c.batch_size == 0 {
        return Err(invalid("batch_size", "must be >= 1"));
    }
    if c.chunk_len == 0 {
        return Err(invalid("chunk_len", "must be >= 1"));
    }
    Ok(())
}

config_keys!(MixtureConfig, [rho_static, batch_size, chunk_len, seed], validate = check_mixture);

/// Appends a zero base command to a 14-D arm action.
pub fn pad_static_action(a_arms: &[f64]) -> Result<[f64; ACTION_DIMS], CotrainError> {
    if a_arms.len() != ARM_DIMS {
        return Err(CotrainError::WrongLength {
            expected: ARM_DIMS,
            got: a_arms.len(),
        });
    }
    if a_arms.iter().any(|v| !v.is_finite()) {
        return Err(CotrainError::NonFinite);
    }
    let mut out = [0.0; ACTION_DIMS];
    out[..ARM_DIMS].copy_from_slice(a_arms);
    Ok(out)
}

/// Indices of the policy cameras (top, lwrist, rwrist) in an episode's
/// camera list. Any other view, such as the static front camera, is dropped.
pub fn align_cameras(header: &EpisodeHeader) -> Result<[usize; 3], CotrainError> {
    let mut out = [0; 3];
    for (slot, name) in out.iter_mut().zip(POLICY_CAMERAS) {
        *slot = header
            .camera_index(name)
            .ok_or_else(|| CotrainError::MissingView(name.to_string()))?;
    }
    Ok(out)
}

/// The three policy views of one step.
pub fn aligned_views<'a>(ep: &'a Episode, cams: &[usize; 3], step: usize) -> [RasterView<'a>; 3] {
    cams.map(|c| ep.raster(step, c))
}

/// Raw 16-D action of any step; static steps are zero-padded.
pub fn full_action(ep: &Episode, step: usize) -> [f64; ACTION_DIMS] {
    match ep.mobile_action(step) {
        Some(a) => a,
        None => {
            let arms = ep.records[step].action_arms.map(f64::from);
            pad_static_action(&arms).expect("validated episode")
        }
    }
}

#[derive(Clone, Debug)]
struct Prepared<'a> {
    episode: &'a Episode,
    cams: [usize; 3],
    /// Normalised actions, one per step.
    actions: Vec<[f64; ACTION_DIMS]>,
    proprio: Vec<[f64; ARM_DIMS]>,
}

impl<'a> Prepared<'a> {
    fn new(episode: &'a Episode, stats: &NormStats) -> Result<Self, CotrainError> {
        let cams = align_cameras(&episode.header)?;
        let actions = (0..episode.len())
            .map(|t| stats.normalize_action(&full_action(episode, t)))
            .collect();
        let proprio = episode
            .records
            .iter()
            .map(|r| stats.normalize_proprio(&r.proprio_f64()))
            .collect();
        Ok(Self {
            episode,
            cams,
            actions,
            proprio,
        })
    }
}

/// One training example in normalised space.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<'a> {
    pub views: [RasterView<'a>; 3],
    pub proprio: [f64; ARM_DIMS],
    /// `chunk_len` rows.
    pub target: Vec<[f64; ACTION_DIMS]>,
    /// True for rows past the end of the episode.
    pub pad: Vec<bool>,
    pub origin: Origin,
    pub episode: usize,
    pub step: usize,
}

/// Deterministic mixture sampler.
#[derive(Clone, Debug)]
pub struct Sampler<'a> {
    mobile: Vec<Prepared<'a>>,
    static_: Vec<Prepared<'a>>,
    cfg: MixtureConfig,
    rng: ChaCha8Rng,
}

fn prepare<'a>(corpus: &'a [Episode], origin: Origin, stats: &NormStats) -> Result<Vec<Prepared<'a>>, CotrainError> {
    corpus
        .iter()
        .filter(|e| !e.is_empty())
        .map(|e| {
            if e.origin() != origin {
                return Err(CotrainError::WrongOrigin {
                    origin,
                    found: e.origin(),
                });
            }
            Prepared::new(e, stats)
        })
        .collect()
}

impl<'a> Sampler<'a> {
    pub fn new(
        mobile: &'a [Episode],
        static_: &'a [Episode],
        cfg: &MixtureConfig,
        stats: &NormStats,
    ) -> Result<Self, CotrainError> {
        Self::with_rng(mobile, static_, cfg, stats, ChaCha8Rng::seed_from_u64(cfg.seed))
    }

    /// Sampler for one of several parallel workers; seeds derive from
    /// `(seed, worker)`.
    pub fn for_worker(
        mobile: &'a [Episode],
        static_: &'a [Episode],
        cfg: &MixtureConfig,
        stats: &NormStats,
        worker: u64,
    ) -> Result<Self, CotrainError> {
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1000 + worker));
        Self::with_rng(mobile, static_, cfg, stats, rng)
    }

    fn with_rng(
        mobile: &'a [Episode],
        static_: &'a [Episode],
        cfg: &MixtureConfig,
        stats: &NormStats,
        rng: ChaCha8Rng,
    ) -> Result<Self, CotrainError> {
        let mobile = prepare(mobile, Origin::Mobile, stats)?;
        let static_ = prepare(static_, Origin::Static, stats)?;
        if cfg.rho_static < 1.0 && mobile.is_empty() {
            return Err(CotrainError::EmptyCorpus(Origin::Mobile));
        }
        if cfg.rho_static > 0.0 && static_.is_empty() {
            return Err(CotrainError::EmptyCorpus(Origin::Static));
        }
        Ok(Self {
            mobile,
            static_,
            cfg: cfg.clone(),
            rng,
        })
    }

    pub fn config(&self) -> &MixtureConfig {
        &self.cfg
    }

    /// Draws the origin, then a uniform episode, then a uniform step.
    pub fn sample(&mut self) -> TrainSample<'a> {
        let is_static = self.cfg.rho_static > 0.0 && self.rng.random_bool(self.cfg.rho_static);
        let (pool, origin) = if is_static {
            (&self.static_, Origin::Static)
        } else {
            (&self.mobile, Origin::Mobile)
        };
        let episode = self.rng.random_range(0..pool.len());
        let p = &pool[episode];
        let step = self.rng.random_range(0..p.actions.len());
        let (target, pad) = chunk_at(&p.actions, step, self.cfg.chunk_len);
        TrainSample {
            views: aligned_views(p.episode, &p.cams, step),
            proprio: p.proprio[step],
            target,
            pad,
            origin,
            episode,
            step,
        }
    }

    pub fn next_batch(&mut self) -> Vec<TrainSample<'a>> {
        (0..self.cfg.batch_size).map(|_| self.sample()).collect()
    }
}

/// Rows `t .. t + k`, repeating the last row past the end with `pad` set.
pub fn chunk_at<T: Copy>(rows: &[T], t: usize, k: usize) -> (Vec<T>, Vec<bool>) {
    let last = rows.len() - 1;
    (0..k)
        .map(|i| {
            let j = t + i;
            if j <= last {
                (rows[j], false)
            } else {
                (rows[last], true)
            }
        })
        .unzip()
}
