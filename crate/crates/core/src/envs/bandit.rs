use super::{check_action, EnvSpec, Environment, StepOutcome};
use crate::error::Result;

pub const MODE_A: [f64; 2] = [0.6, 0.6];
pub const MODE_B: [f64; 2] = [-0.6, -0.6];
const WIDTH: f64 = 0.05;

/// One-step task with two equally rewarding action modes.
pub struct BimodalBandit {
    spec: EnvSpec,
}

impl BimodalBandit {
    pub fn new() -> Self {
        BimodalBandit {
            spec: EnvSpec {
                name: "bimodal_bandit".into(),
                state_dim: 1,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_episode_steps: 1,
                gamma_default: 0.5,
            },
        }
    }

    pub fn reward(action: &[f64]) -> f64 {
        let bump = |c: &[f64; 2]| {
            let d2: f64 = action.iter().zip(c).map(|(a, c)| (a - c).powi(2)).sum();
            (-d2 / WIDTH).exp()
        };
        bump(&MODE_A) + bump(&MODE_B)
    }
}

impl Default for BimodalBandit {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for BimodalBandit {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: Option<u64>) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        check_action(&self.spec, action)?;
        Ok(StepOutcome {
            next_state: vec![0.0],
            reward: Self::reward(action),
            done: true,
        })
    }
}
