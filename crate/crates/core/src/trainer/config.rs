use serde::{Deserialize, Serialize};

use crate::critic::QuantileHuberParams;
use crate::error::{PacerError, Result};
use crate::utility::{validate_distortion, UtilityFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Pushforward,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    Mmd,
    None,
    EpsilonGreedy,
}

/// Hyperparameters for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// `None` takes the environment's default discount.
    pub gamma: Option<f64>,
    pub batch_size: usize,
    pub quantiles: usize,
    pub kappa: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub n_mmd: usize,
    /// Batch states used for the regularizer; `None` uses the whole batch.
    pub mmd_states: Option<usize>,
    /// `None` uses the action dimension.
    pub mmd_bandwidth_sq: Option<f64>,
    pub alpha_init: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// `None` measures half the uniform-vs-uniform MMD at startup.
    pub beta_init: Option<f64>,
    pub beta_step: f64,
    pub beta_min: f64,
    pub update_every: usize,
    pub policy_delay: usize,
    pub polyak: f64,
    pub total_steps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub cos_features: usize,
    pub replay_capacity: usize,
    pub normalize_obs: bool,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub utility: UtilityFunction,
    pub policy: PolicyKind,
    pub regularizer: RegularizerKind,
    pub epsilon: f64,
    /// When false the wall-clock column is written as 0 so that runs are
    /// byte-comparable.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: None,
            batch_size: 100,
            quantiles: 32,
            kappa: 1.0,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            lr_alpha: 1e-3,
            n_mmd: 100,
            mmd_states: None,
            mmd_bandwidth_sq: None,
            alpha_init: 0.5,
            alpha_min: 0.05,
            alpha_max: 5.0,
            beta_init: None,
            beta_step: 0.01,
            beta_min: 1e-3,
            update_every: 50,
            policy_delay: 1,
            polyak: 0.005,
            total_steps: 100_000,
            warmup: 1000,
            seed: 0,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            cos_features: 64,
            replay_capacity: 1_000_000,
            normalize_obs: true,
            eval_every: 5000,
            eval_episodes: 5,
            utility: UtilityFunction::default(),
            policy: PolicyKind::Pushforward,
            regularizer: RegularizerKind::Mmd,
            epsilon: 0.1,
            log_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn quantile_params(&self) -> QuantileHuberParams {
        QuantileHuberParams {
            kappa: self.kappa,
            k: self.quantiles,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(PacerError::Config(format!("{key}: {why}")));
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return bad("gamma", "must lie in (0, 1)");
            }
        }
        let positive_counts = [
            ("batch_size", self.batch_size),
            ("quantiles", self.quantiles),
            ("update_every", self.update_every),
            ("policy_delay", self.policy_delay),
            ("cos_features", self.cos_features),
            ("replay_capacity", self.replay_capacity),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
        ];
        for (k, v) in positive_counts {
            if v == 0 {
                return bad(k, "must be positive");
            }
        }
        let positive_reals = [
            ("kappa", self.kappa),
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_alpha", self.lr_alpha),
            ("alpha_init", self.alpha_init),
            ("alpha_min", self.alpha_min),
            ("beta_step", self.beta_step),
            ("beta_min", self.beta_min),
        ];
        for (k, v) in positive_reals {
            if !(v > 0.0 && v.is_finite()) {
                return bad(k, "must be a positive number");
            }
        }
        if !(self.alpha_max > self.alpha_min) {
            return bad("alpha_max", "must exceed alpha_min");
        }
        if let Some(b) = self.beta_init {
            if !(b > 0.0) {
                return bad("beta_init", "must be positive");
            }
        }
        if let Some(h) = self.mmd_bandwidth_sq {
            if !(h > 0.0) {
                return bad("mmd_bandwidth_sq", "must be positive");
            }
        }
        if self.mmd_states == Some(0) {
            return bad("mmd_states", "must be positive");
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return bad("polyak", "must lie in (0, 1]");
        }
        if self.actor_hidden.is_empty() || self.actor_hidden.contains(&0) {
            return bad("actor_hidden", "needs positive layer widths");
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            return bad("critic_hidden", "needs positive layer widths");
        }
        if self.regularizer == RegularizerKind::Mmd && self.n_mmd < 2 {
            return bad("n_mmd", "needs at least 2 samples");
        }
        if self.regularizer == RegularizerKind::EpsilonGreedy && !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad("epsilon", "must lie in (0, 1]");
        }
        validate_distortion(&self.utility)
    }
}
