use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_action, EnvSpec, Environment, StepOutcome};
use crate::error::Result;

pub const MAX_VELOCITY: f64 = 6.0;
/// Speeds strictly above this are exposed to the crash penalty.
pub const SPEED_LIMIT: f64 = 4.0;
pub const PENALTY: f64 = 15.0;
pub const PENALTY_PROB: f64 = 0.1;
const ACCEL_GAIN: f64 = 0.5;
const VELOCITY_NOISE: f64 = 0.05;

/// One-dimensional driving task: reward equals speed, but speeding risks a
/// rare large penalty.
pub struct RiskyDrive {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    velocity: f64,
    t: usize,
}

impl RiskyDrive {
    pub fn new() -> Self {
        RiskyDrive {
            spec: EnvSpec {
                name: "risky_drive".into(),
                state_dim: 1,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_episode_steps: 100,
                gamma_default: 0.9,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            noise: Normal::new(0.0, VELOCITY_NOISE).expect("valid std"),
            velocity: 0.0,
            t: 0,
        }
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    pub fn set_velocity(&mut self, v: f64) {
        self.velocity = v.clamp(0.0, MAX_VELOCITY);
    }

    /// Reward drawn at speed `v`.
    pub fn sample_reward(v: f64, rng: &mut impl Rng) -> f64 {
        let crash = v > SPEED_LIMIT && rng.random_bool(PENALTY_PROB);
        if crash {
            v - PENALTY
        } else {
            v
        }
    }
}

impl Default for RiskyDrive {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for RiskyDrive {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        self.velocity = 0.0;
        self.t = 0;
        vec![self.velocity]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        check_action(&self.spec, action)?;
        let a = action[0].clamp(-1.0, 1.0);
        let reward = Self::sample_reward(self.velocity, &mut self.rng);
        let dv = ACCEL_GAIN * a + self.noise.sample(&mut self.rng);
        self.velocity = (self.velocity + dv).clamp(0.0, MAX_VELOCITY);
        self.t += 1;
        Ok(StepOutcome {
            next_state: vec![self.velocity],
            reward,
            done: self.t >= self.spec.max_episode_steps,
        })
    }
}
