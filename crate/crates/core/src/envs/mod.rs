//! Continuous-control tasks behind a common interface.
//!
//! All tasks are time limited: `done` is raised only when the episode hits
//! `max_episode_steps`. Training treats that as a truncation and keeps
//! bootstrapping through it.

pub mod bandit;
pub mod normalizer;
pub mod pendulum;
pub mod risky;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use bandit::BimodalBandit;
pub use normalizer::ObsNormalizer;
pub use pendulum::Pendulum;
pub use risky::RiskyDrive;

use crate::error::{PacerError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    pub gamma_default: f64,
}

impl EnvSpec {
    pub fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }

    pub fn contains_action(&self, action: &[f64]) -> bool {
        action.len() == self.action_dim
            && action
                .iter()
                .zip(self.action_low.iter().zip(&self.action_high))
                .all(|(a, (lo, hi))| (*lo..=*hi).contains(a))
    }
}

/// One interaction record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode. `Some(seed)` reseeds the environment's generator.
    fn reset(&mut self, seed: Option<u64>) -> Vec<f64>;

    /// Advances one step. Actions outside the box are the caller's problem;
    /// NaN components are rejected.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
}

pub const ENV_NAMES: [&str; 3] = ["bimodal_bandit", "pendulum", "risky_drive"];

/// Builds a built-in environment by name.
pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "bimodal_bandit" => Ok(Box::new(BimodalBandit::new())),
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "risky_drive" => Ok(Box::new(RiskyDrive::new())),
        other => Err(PacerError::config(format!(
            "unknown env `{other}`; expected one of {ENV_NAMES:?}"
        ))),
    }
}

pub(crate) fn check_action(spec: &EnvSpec, action: &[f64]) -> Result<()> {
    if action.len() != spec.action_dim {
        return Err(PacerError::Usage(format!(
            "{} expects {} action components, got {}",
            spec.name,
            spec.action_dim,
            action.len()
        )));
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(PacerError::Usage(format!("NaN action passed to {}", spec.name)));
    }
    Ok(())
}

/// Writes `step,state…,action…,reward,done` rows.
pub fn write_trajectory_csv<W: Write>(out: W, spec: &EnvSpec, steps: &[Transition]) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    let mut header = vec!["step".to_string()];
    header.extend((0..spec.state_dim).map(|i| format!("state_{i}")));
    header.extend((0..spec.action_dim).map(|i| format!("action_{i}")));
    header.push("reward".into());
    header.push("done".into());
    writeln!(out, "{}", header.join(","))?;
    for (i, t) in steps.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(t.state.iter().map(|v| v.to_string()));
        row.extend(t.action.iter().map(|v| v.to_string()));
        row.push(t.reward.to_string());
        row.push(u8::from(t.done).to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factory_knows_every_builtin() {
        for name in ENV_NAMES {
            let env = make_env(name).unwrap();
            let s = env.spec();
            assert_eq!(s.name, name);
            assert!(s.action_low.iter().zip(&s.action_high).all(|(l, h)| l < h));
            assert!(s.gamma_default > 0.0 && s.gamma_default < 1.0);
        }
        assert!(matches!(make_env("hopper"), Err(PacerError::Config(_))));
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        for name in ENV_NAMES {
            let run = || {
                let mut env = make_env(name).unwrap();
                let mut states = vec![env.reset(Some(42))];
                let dim = env.spec().action_dim;
                for k in 0..50 {
                    let a: Vec<f64> = (0..dim).map(|i| ((k * 7 + i) as f64 * 0.37).sin()).collect();
                    let a = env.spec().clamp_action(&a);
                    let out = env.step(&a).unwrap();
                    states.push(out.next_state.clone());
                    states.push(vec![out.reward]);
                    if out.done {
                        states.push(env.reset(None));
                    }
                }
                states
            };
            assert_eq!(run(), run(), "{name}");
        }
    }

    #[test]
    fn nan_action_is_rejected() {
        for name in ENV_NAMES {
            let mut env = make_env(name).unwrap();
            env.reset(Some(0));
            let a = vec![f64::NAN; env.spec().action_dim];
            assert!(matches!(env.step(&a), Err(PacerError::Usage(_))));
        }
    }

    #[test]
    fn trajectory_csv_layout() {
        let env = make_env("pendulum").unwrap();
        let t = Transition {
            state: vec![1.0, 0.0, 0.5],
            action: vec![-2.0],
            reward: -0.25,
            next_state: vec![1.0, 0.0, 0.4],
            done: false,
        };
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, env.spec(), &[t]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,state_0,state_1,state_2,action_0,reward,done\n0,1,0,0.5,-2,-0.25,0\n"
        );
    }
}
