//! Training loop for the co-training objective.

use std::fmt;
use std::str::FromStr;

use crate::config::{invalid, ConfigError};
use crate::config_keys;
use crate::cotrain::{CotrainError, MixtureConfig, Sampler};
use crate::dataset::{Episode, NormStats};

use super::{batch_targets, loss_and_grad, AdamW, Arch, Inputs, NnError, PolicyNet};

/// Whether chunk rows past the end of an episode count in the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossMask {
    #[default]
    Include,
    Mask,
}

impl fmt::Display for LossMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMask::Include => "include",
            LossMask::Mask => "mask",
        })
    }
}

impl FromStr for LossMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "include" => Ok(LossMask::Include),
            "mask" => Ok(LossMask::Mask),
            _ => Err(format!("unknown loss mask policy `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub rho_static: f64,
    pub batch_size: usize,
    pub chunk_len: usize,
    pub seed: u64,
    pub loss_mask_policy: LossMask,
    pub weight_decay: f64,
    /// Static-only steps before the mobile phase of pre-training.
    pub pretrain_steps: usize,
    pub pooled_side: usize,
    pub view_hidden: usize,
    pub proprio_hidden: usize,
    pub trunk_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Arch::default();
        Self {
            lr: 2e-5,
            steps: 5000,
            rho_static: 0.5,
            batch_size: 16,
            chunk_len: arch.chunk_len,
            seed: 0,
            loss_mask_policy: LossMask::Include,
            weight_decay: 1e-4,
            pretrain_steps: 10_000,
            pooled_side: arch.pooled_side,
            view_hidden: arch.view_hidden,
            proprio_hidden: arch.proprio_hidden,
            trunk_hidden: arch.trunk_hidden,
        }
    }
}

fn check_train(c: &TrainConfig) -> Result<(), ConfigError> {
    if !(c.lr > 0.0) || !c.lr.is_finite() {
        return Err(invalid("lr", "must be positive"));
    }
    if !(c.weight_decay >= 0.0) {
        return Err(invalid("weight_decay", "must be >= 0"));
    }
    crate::config::ConfigKeys::validate(&c.mixture())?;
    c.arch().validate()
}

config_keys!(
    TrainConfig,
    [
        lr,
        steps,
        rho_static,
        batch_size,
        chunk_len,
        seed,
        loss_mask_policy,
        weight_decay,
        pretrain_steps,
        pooled_side,
        view_hidden,
        proprio_hidden,
        trunk_hidden,
    ],
    validate = check_train
);

impl TrainConfig {
    pub fn mixture(&self) -> MixtureConfig {
        MixtureConfig {
            rho_static: self.rho_static,
            batch_size: self.batch_size,
            chunk_len: self.chunk_len,
            seed: self.seed,
        }
    }

    pub fn arch(&self) -> Arch {
        Arch {
            chunk_len: self.chunk_len,
            pooled_side: self.pooled_side,
            view_hidden: self.view_hidden,
            proprio_hidden: self.proprio_hidden,
            trunk_hidden: self.trunk_hidden,
            ..Arch::default()
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] CotrainError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: PolicyNet,
    /// One batch loss per step.
    pub losses: Vec<f64>,
    pub steps: usize,
}

/// Trains a fresh network initialised from `cfg.seed`.
pub fn train(
    mobile: &[Episode],
    static_: &[Episode],
    stats: &NormStats,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    crate::config::ConfigKeys::validate(cfg)?;
    let net = PolicyNet::new(&cfg.arch(), cfg.seed);
    continue_training(net, mobile, static_, stats, cfg, 0)
}

/// Runs `cfg.steps` more steps from `net` with a fresh optimiser. `phase`
/// separates the sampler streams of successive phases.
pub fn continue_training(
    mut net: PolicyNet,
    mobile: &[Episode],
    static_: &[Episode],
    stats: &NormStats,
    cfg: &TrainConfig,
    phase: u64,
) -> Result<TrainOutcome, TrainError> {
    let mut losses = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        return Ok(TrainOutcome {
            net,
            losses,
            steps: 0,
        });
    }
    let mixture = cfg.mixture();
    let mut sampler = if phase == 0 {
        Sampler::new(mobile, static_, &mixture, stats)?
    } else {
        Sampler::for_worker(mobile, static_, &mixture, stats, phase)?
    };
    let arch = net.arch.clone();
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay, net.num_params());
    let mut initial = None;
    for step in 0..cfg.steps {
        let batch = sampler.next_batch();
        let x = Inputs::from_samples(&arch, &batch)?;
        let (t, w) = batch_targets(&batch, cfg.loss_mask_policy);
        let (loss, grad) = loss_and_grad(&net, &x, &t, &w)?;
        let init = *initial.get_or_insert(loss);
        if loss > 1e3 * init {
            return Err(NnError::Diverged {
                step,
                loss,
                initial: init,
            }
            .into());
        }
        losses.push(loss);
        opt.step(&mut net, &grad);
    }
    Ok(TrainOutcome {
        net,
        losses,
        steps: cfg.steps,
    })
}

/// Static-only training for `cfg.pretrain_steps`, then mobile-only training
/// for `cfg.steps` on the same parameters.
pub fn pretrain_then_finetune(
    static_: &[Episode],
    mobile: &[Episode],
    stats: &NormStats,
    cfg: &TrainConfig,
) -> Result<(TrainOutcome, TrainOutcome), TrainError> {
    crate::config::ConfigKeys::validate(cfg)?;
    let net = PolicyNet::new(&cfg.arch(), cfg.seed);
    let phase1_cfg = TrainConfig {
        rho_static: 1.0,
        steps: cfg.pretrain_steps,
        ..cfg.clone()
    };
    let phase1 = continue_training(net, &[], static_, stats, &phase1_cfg, 1)?;
    let phase2_cfg = TrainConfig {
        rho_static: 0.0,
        ..cfg.clone()
    };
    let phase2 = continue_training(phase1.net.clone(), mobile, &[], stats, &phase2_cfg, 0)?;
    Ok((phase1, phase2))
}
