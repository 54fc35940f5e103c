//! Agent checkpoints: one directory holding the actor, both online critics,
//! the observation statistics and a small metadata file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::approximator::checkpoint::{load_params, save_params};
use crate::critic::{IqnNet, IqnSpec};
use crate::envs::{EnvSpec, ObsNormalizer};
use crate::error::{PacerError, Result};
use crate::trainer::{Policy, PolicyKind, TrainerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub env: EnvSpec,
    pub policy: PolicyKind,
    pub actor_hidden: Vec<usize>,
    pub critic: IqnSpec,
    pub normalize_obs: bool,
    pub env_steps: usize,
    pub grad_steps: usize,
}

/// Everything needed to act and to query the learned return distribution.
#[derive(Clone, Debug)]
pub struct Agent {
    pub meta: AgentMeta,
    pub policy: Policy,
    pub critics: [IqnNet; 2],
    pub normalizer: ObsNormalizer,
}

impl Agent {
    pub fn from_state(state: &TrainerState, actor_hidden: Vec<usize>, normalize_obs: bool) -> Self {
        Agent {
            meta: AgentMeta {
                env: state.env.clone(),
                policy: state.policy.kind(),
                actor_hidden,
                critic: state.critics.spec().clone(),
                normalize_obs,
                env_steps: state.env_steps,
                grad_steps: state.grad_steps,
            },
            policy: state.policy.clone(),
            critics: state.critics.online.clone(),
            normalizer: state.normalizer.clone(),
        }
    }

    pub fn normalizer(&self) -> Option<&ObsNormalizer> {
        self.meta.normalize_obs.then_some(&self.normalizer)
    }

    pub fn observe(&self, state: &[f64]) -> Vec<f64> {
        match self.normalizer() {
            Some(n) => n.apply(state),
            None => state.to_vec(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_params(&dir.join("actor"), "actor", self.policy.as_actor().params())?;
        save_params(&dir.join("critic_1"), "critic", &self.critics[0].params)?;
        save_params(&dir.join("critic_2"), "critic", &self.critics[1].params)?;
        fs::write(dir.join("normalizer.json"), serde_json::to_string_pretty(&self.normalizer)?)?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| PacerError::Checkpoint(format!("{}: {e}", dir.join(name).display())));
        let meta: AgentMeta = serde_json::from_str(&read("meta.json")?).map_err(|e| PacerError::Checkpoint(format!("meta.json: {e}")))?;
        let normalizer: ObsNormalizer =
            serde_json::from_str(&read("normalizer.json")?).map_err(|e| PacerError::Checkpoint(format!("normalizer.json: {e}")))?;
        let (_, actor) = load_params(&dir.join("actor"))?;
        let (_, c1) = load_params(&dir.join("critic_1"))?;
        let (_, c2) = load_params(&dir.join("critic_2"))?;
        let wrap = |e: PacerError| PacerError::Checkpoint(e.to_string());
        let policy = Policy::from_params(
            meta.policy,
            meta.env.state_dim,
            meta.env.action_low.clone(),
            meta.env.action_high.clone(),
            meta.actor_hidden.clone(),
            actor,
        )
        .map_err(wrap)?;
        let critics = [
            IqnNet::from_params(meta.critic.clone(), c1).map_err(wrap)?,
            IqnNet::from_params(meta.critic.clone(), c2).map_err(wrap)?,
        ];
        if normalizer.dim() != meta.env.state_dim {
            return Err(PacerError::Checkpoint("normalizer dimension does not match the environment".into()));
        }
        Ok(Agent {
            meta,
            policy,
            critics,
            normalizer,
        })
    }

    /// Checks that the checkpoint was trained on an environment of the same
    /// shape as `env`.
    pub fn check_env(&self, env: &EnvSpec) -> Result<()> {
        let m = &self.meta.env;
        if m.state_dim != env.state_dim || m.action_dim != env.action_dim || m.action_low != env.action_low || m.action_high != env.action_high {
            return Err(PacerError::Checkpoint(format!(
                "checkpoint was trained on `{}` (state {}, action {}) but `{}` has state {}, action {}",
                m.name, m.state_dim, m.action_dim, env.name, env.state_dim, env.action_dim
            )));
        }
        Ok(())
    }
}
