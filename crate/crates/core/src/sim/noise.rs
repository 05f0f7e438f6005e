//! Base velocity tracking model: first-order lag, per-episode multiplicative
//! bias and per-step Gaussian scatter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::BaseVelocity;
use crate::config::{invalid, ConfigError};

/// Noise parameters as configured. Biases are standard deviations here; a
/// [`NoiseModel`] holds one concrete draw.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Lag time constant in seconds.
    pub tau: f64,
    pub bias_std_v: f64,
    pub bias_std_omega: f64,
    pub sigma_v: f64,
    pub sigma_omega: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            bias_std_v: 0.05,
            bias_std_omega: 0.05,
            sigma_v: 0.02,
            sigma_omega: 0.05,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            tau: 0.0,
            bias_std_v: 0.0,
            bias_std_omega: 0.0,
            sigma_v: 0.0,
            sigma_omega: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::zero()
    }
}

crate::config_keys!(
    NoiseConfig,
    [tau, bias_std_v, bias_std_omega, sigma_v, sigma_omega],
    validate = NoiseConfig::check
);

impl NoiseConfig {
    fn check(&self) -> Result<(), ConfigError> {
        for (k, v) in [
            ("tau", self.tau),
            ("bias_std_v", self.bias_std_v),
            ("bias_std_omega", self.bias_std_omega),
            ("sigma_v", self.sigma_v),
            ("sigma_omega", self.sigma_omega),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(k, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// One episode's realisation of the base noise. Owns its RNG.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    pub tau: f64,
    pub bias_v: f64,
    pub bias_omega: f64,
    pub sigma_v: f64,
    pub sigma_omega: f64,
    pub seed: u64,
    rng: ChaCha8Rng,
}

impl NoiseModel {
    /// Draws the per-episode biases once from `cfg` using `seed`.
    pub fn sample(cfg: &NoiseConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |std: f64| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        };
        let bias_v = draw(cfg.bias_std_v);
        let bias_omega = draw(cfg.bias_std_omega);
        Self {
            tau: cfg.tau,
            bias_v,
            bias_omega,
            sigma_v: cfg.sigma_v,
            sigma_omega: cfg.sigma_omega,
            seed,
            rng,
        }
    }

    /// Exact tracking: the base reaches the command in one step.
    pub fn zero() -> Self {
        Self::sample(&NoiseConfig::zero(), 0)
    }

    /// Overrides the drawn biases, e.g. to inject a known heading bias.
    pub fn with_bias(mut self, bias_v: f64, bias_omega: f64) -> Self {
        self.bias_v = bias_v;
        self.bias_omega = bias_omega;
        self
    }

    /// Returns the new filter state and the actual velocity for this step.
    pub fn track(
        &mut self,
        lag: BaseVelocity,
        cmd: BaseVelocity,
        dt: f64,
    ) -> (BaseVelocity, BaseVelocity) {
        let target_v = (1.0 + self.bias_v) * cmd.v;
        let target_w = (1.0 + self.bias_omega) * cmd.omega;
        let (v, omega) = if self.tau > 0.0 {
            let alpha = 1.0 - (-dt / self.tau).exp();
            (
                lag.v + alpha * (target_v - lag.v),
                lag.omega + alpha * (target_w - lag.omega),
            )
        } else {
            (target_v, target_w)
        };
        let filtered = BaseVelocity { v, omega };
        let mut actual = filtered;
        if self.sigma_v > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            actual.v += self.sigma_v * z;
        }
        if self.sigma_omega > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            actual.omega += self.sigma_omega * z;
        }
        (filtered, actual)
    }
}
