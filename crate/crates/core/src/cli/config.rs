use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{PacerError, Result};
use crate::trainer::{PolicyKind, RegularizerKind, TrainConfig};
use crate::utility::{RewardReshape, UtilityFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Identity,
    Cvar,
    Tanh,
    Scale,
}

/// Flat experiment description with dotted keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Single-seed shorthand; takes precedence over `seeds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// Zero writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: usize,

    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default = "d::quantiles")]
    pub quantiles: usize,
    #[serde(default = "d::kappa")]
    pub kappa: f64,
    #[serde(default = "d::lr")]
    pub lr_actor: f64,
    #[serde(default = "d::lr")]
    pub lr_critic: f64,
    #[serde(default = "d::lr")]
    pub lr_alpha: f64,
    #[serde(rename = "mmd.n_samples", default = "d::n_mmd")]
    pub mmd_n_samples: usize,
    #[serde(rename = "mmd.states", default)]
    pub mmd_states: Option<usize>,
    #[serde(rename = "mmd.bandwidth_sq", default)]
    pub mmd_bandwidth_sq: Option<f64>,
    #[serde(rename = "alpha.init", default = "d::alpha_init")]
    pub alpha_init: f64,
    #[serde(rename = "alpha.min", default = "d::alpha_min")]
    pub alpha_min: f64,
    #[serde(rename = "alpha.max", default = "d::alpha_max")]
    pub alpha_max: f64,
    #[serde(rename = "beta.init", default)]
    pub beta_init: Option<f64>,
    #[serde(rename = "beta.step", default = "d::beta_step")]
    pub beta_step: f64,
    #[serde(rename = "beta.min", default = "d::beta_min")]
    pub beta_min: f64,
    #[serde(default = "d::update_every")]
    pub update_every: usize,
    #[serde(default = "d::one")]
    pub policy_delay: usize,
    #[serde(default = "d::polyak")]
    pub polyak: f64,
    #[serde(default = "d::total_steps")]
    pub total_steps: usize,
    #[serde(default = "d::warmup")]
    pub warmup: usize,
    #[serde(rename = "network.actor_hidden", default = "d::hidden")]
    pub actor_hidden: Vec<usize>,
    #[serde(rename = "network.critic_hidden", default = "d::hidden")]
    pub critic_hidden: Vec<usize>,
    #[serde(rename = "network.cos_features", default = "d::cos_features")]
    pub cos_features: usize,
    #[serde(rename = "replay.capacity", default = "d::capacity")]
    pub replay_capacity: usize,
    #[serde(default = "d::yes")]
    pub normalize_obs: bool,
    #[serde(rename = "eval.every", default = "d::eval_every")]
    pub eval_every: usize,
    #[serde(rename = "eval.episodes", default = "d::eval_episodes")]
    pub eval_episodes: usize,
    #[serde(rename = "utility.kind", default = "d::utility_kind")]
    pub utility_kind: UtilityKind,
    #[serde(rename = "utility.cvar_level", default = "d::one_f")]
    pub cvar_level: f64,
    #[serde(rename = "utility.scale", default = "d::one_f")]
    pub reward_scale: f64,
    #[serde(rename = "ablation.policy", default = "d::policy")]
    pub policy: PolicyKind,
    #[serde(rename = "ablation.regularizer", default = "d::regularizer")]
    pub regularizer: RegularizerKind,
    #[serde(rename = "ablation.epsilon", default = "d::epsilon")]
    pub epsilon: f64,
    #[serde(default = "d::yes")]
    pub log_wall_time: bool,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> String {
    "runs".into()
}

mod d {
    use super::UtilityKind;
    use crate::trainer::{PolicyKind, RegularizerKind, TrainConfig};

    fn t() -> TrainConfig {
        TrainConfig::default()
    }
    pub fn batch_size() -> usize {
        t().batch_size
    }
    pub fn quantiles() -> usize {
        t().quantiles
    }
    pub fn kappa() -> f64 {
        t().kappa
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn n_mmd() -> usize {
        t().n_mmd
    }
    pub fn alpha_init() -> f64 {
        t().alpha_init
    }
    pub fn alpha_min() -> f64 {
        t().alpha_min
    }
    pub fn alpha_max() -> f64 {
        t().alpha_max
    }
    pub fn beta_step() -> f64 {
        t().beta_step
    }
    pub fn beta_min() -> f64 {
        t().beta_min
    }
    pub fn update_every() -> usize {
        t().update_every
    }
    pub fn one() -> usize {
        1
    }
    pub fn one_f() -> f64 {
        1.0
    }
    pub fn polyak() -> f64 {
        t().polyak
    }
    pub fn total_steps() -> usize {
        t().total_steps
    }
    pub fn warmup() -> usize {
        t().warmup
    }
    pub fn hidden() -> Vec<usize> {
        t().actor_hidden
    }
    pub fn cos_features() -> usize {
        t().cos_features
    }
    pub fn capacity() -> usize {
        t().replay_capacity
    }
    pub fn yes() -> bool {
        true
    }
    pub fn eval_every() -> usize {
        t().eval_every
    }
    pub fn eval_episodes() -> usize {
        t().eval_episodes
    }
    pub fn utility_kind() -> UtilityKind {
        UtilityKind::Identity
    }
    pub fn policy() -> PolicyKind {
        PolicyKind::Pushforward
    }
    pub fn regularizer() -> RegularizerKind {
        RegularizerKind::Mmd
    }
    pub fn epsilon() -> f64 {
        t().epsilon
    }
}

/// Parses `key=value`; the value is read as JSON when possible and as a
/// bare string otherwise.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| PacerError::Config(format!("override `{text}` is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Builds from a JSON object plus overrides; unknown or missing keys are
    /// configuration errors.
    pub fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        let map: &mut Map<String, Value> = value
            .as_object_mut()
            .ok_or_else(|| PacerError::Config("config must be a JSON object".into()))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            map.insert(k, v);
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| PacerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PacerError::Config(format!("{}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| PacerError::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value, overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match self.seed {
            Some(s) => vec![s],
            None => self.seeds.clone(),
        }
    }

    pub fn utility(&self) -> Result<UtilityFunction> {
        Ok(match self.utility_kind {
            UtilityKind::Identity => UtilityFunction::identity(),
            UtilityKind::Cvar => UtilityFunction::cvar(self.cvar_level).map_err(|e| PacerError::Config(format!("utility.cvar_level: {e}")))?,
            UtilityKind::Tanh => UtilityFunction::reshape(RewardReshape::Tanh),
            UtilityKind::Scale => UtilityFunction::reshape(RewardReshape::Scale { factor: self.reward_scale }),
        })
    }

    pub fn validate(&self) -> Result<()> {
        crate::envs::make_env(&self.env).map_err(|_| PacerError::Config(format!("env: unknown environment `{}`", self.env)))?;
        if self.seed_list().is_empty() {
            return Err(PacerError::Config("seeds: at least one seed is required".into()));
        }
        self.train_config(self.seed_list()[0])?.validate()
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        Ok(TrainConfig {
            gamma: self.gamma,
            batch_size: self.batch_size,
            quantiles: self.quantiles,
            kappa: self.kappa,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
            lr_alpha: self.lr_alpha,
            n_mmd: self.mmd_n_samples,
            mmd_states: self.mmd_states,
            mmd_bandwidth_sq: self.mmd_bandwidth_sq,
            alpha_init: self.alpha_init,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            beta_init: self.beta_init,
            beta_step: self.beta_step,
            beta_min: self.beta_min,
            update_every: self.update_every,
            policy_delay: self.policy_delay,
            polyak: self.polyak,
            total_steps: self.total_steps,
            warmup: self.warmup,
            seed,
            actor_hidden: self.actor_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            cos_features: self.cos_features,
            replay_capacity: self.replay_capacity,
            normalize_obs: self.normalize_obs,
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
            utility: self.utility()?,
            policy: self.policy,
            regularizer: self.regularizer,
            epsilon: self.epsilon,
            log_wall_time: self.log_wall_time,
        })
    }
}
