use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, EnvSpec, Environment, StepOutcome};
use crate::error::Result;

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;

/// Torque-controlled rod swing-up. `theta = 0` is upright.
pub struct Pendulum {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    theta: f64,
    theta_dot: f64,
    t: usize,
}

pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new() -> Self {
        Pendulum {
            spec: EnvSpec {
                name: "pendulum".into(),
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-MAX_TORQUE],
                action_high: vec![MAX_TORQUE],
                max_episode_steps: 200,
                gamma_default: 0.99,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            theta: 0.0,
            theta_dot: 0.0,
            t: 0,
        }
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.t = 0;
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn theta_dot(&self) -> f64 {
        self.theta_dot
    }

    /// Mechanical energy of the uniform rod, pivot at one end.
    pub fn energy(&self) -> f64 {
        let inertia = MASS * LENGTH * LENGTH / 3.0;
        0.5 * inertia * self.theta_dot.powi(2) + MASS * GRAVITY * 0.5 * LENGTH * self.theta.cos()
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        self.theta = self.rng.random_range(-PI..=PI);
        self.theta_dot = self.rng.random_range(-1.0..=1.0);
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        check_action(&self.spec, action)?;
        let u = action[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let cost = wrap_angle(self.theta).powi(2) + 0.1 * self.theta_dot.powi(2) + 0.001 * u * u;
        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.sin() + 3.0 * u / (MASS * LENGTH * LENGTH);
        self.theta_dot = (self.theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
        self.t += 1;
        Ok(StepOutcome {
            next_state: self.observe(),
            reward: -cost,
            done: self.t >= self.spec.max_episode_steps,
        })
    }
}
