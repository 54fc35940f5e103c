//! Push-forward policy: actions are `g(s, xi)` for base noise `xi`, so the
//! policy is sampled but never evaluated as a density.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::approximator::{mlp_apply, Activation, Matrix, MlpSpec, ParamVars, ParamVector, Tape, Var};
use crate::error::{PacerError, Result};

/// Which base distribution to draw noise from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// N(0, 1) per coordinate, used while collecting data.
    Train,
    /// N(0, 0.5) per coordinate, used for evaluation.
    Eval,
}

impl NoiseMode {
    pub fn std(self) -> f64 {
        match self {
            NoiseMode::Train => 1.0,
            NoiseMode::Eval => 0.5,
        }
    }
}

pub fn sample_normal_noise<R: Rng + ?Sized>(dim: usize, mode: NoiseMode, rng: &mut R) -> Vec<f64> {
    let std = mode.std();
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

/// Map from the normalized box `[-1, 1]^d` to `[low, high]`.
pub fn rescale_action(normalized: &[f64], low: &[f64], high: &[f64]) -> Vec<f64> {
    normalized
        .iter()
        .zip(low.iter().zip(high))
        .map(|(u, (lo, hi))| (lo + (hi - lo) * (u + 1.0) / 2.0).clamp(*lo, *hi))
        .collect()
}

pub fn normalize_action(action: &[f64], low: &[f64], high: &[f64]) -> Vec<f64> {
    action
        .iter()
        .zip(low.iter().zip(high))
        .map(|(a, (lo, hi))| (2.0 * (a - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
        .collect()
}

/// A reparameterized stochastic actor whose samples are differentiable in its
/// parameters. Implemented by the push-forward policy and by the Gaussian
/// ablation head.
pub trait StochasticActor {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn params(&self) -> &ParamVector;
    fn params_mut(&mut self) -> &mut ParamVector;
    fn action_low(&self) -> &[f64];
    fn action_high(&self) -> &[f64];

    /// Actions in `[-1, 1]^action_dim`, one row per `(state, noise)` row pair.
    fn normalized_actions(&self, tape: &mut Tape, vars: &ParamVars, states: Var, noise: Var) -> Result<Var>;

    fn sample_noise(&self, mode: NoiseMode, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        sample_normal_noise(self.noise_dim(), mode, rng)
    }

    /// Environment-scale action for one state and one noise draw.
    fn act(&self, state: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        let batch = self.act_batch(&Matrix::row_vector(state), &Matrix::row_vector(noise))?;
        Ok(batch.row(0).to_vec())
    }

    /// Environment-scale actions for matched rows of states and noise.
    fn act_batch(&self, states: &Matrix, noise: &Matrix) -> Result<Matrix> {
        if states.cols() != self.state_dim() || noise.cols() != self.noise_dim() || states.rows() != noise.rows() {
            return Err(PacerError::config(format!(
                "actor expects state dim {} and noise dim {}, got {}x{} and {}x{}",
                self.state_dim(),
                self.noise_dim(),
                states.rows(),
                states.cols(),
                noise.rows(),
                noise.cols()
            )));
        }
        let mut tape = Tape::new();
        let vars = tape.register(self.params(), false);
        let s = tape.constant(states.clone());
        let z = tape.constant(noise.clone());
        let u = self.normalized_actions(&mut tape, &vars, s, z)?;
        let u = tape.value(u);
        let rows: Vec<Vec<f64>> = (0..u.rows())
            .map(|r| rescale_action(u.row(r), self.action_low(), self.action_high()))
            .collect();
        Ok(Matrix::from_rows(&rows))
    }

    /// `n` actions at one state from independent noise draws.
    fn sample_actions_batch(&self, state: &[f64], n: usize, mode: NoiseMode, rng: &mut dyn rand::RngCore) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(PacerError::Usage("sample_actions_batch needs n >= 1".into()));
        }
        let noise: Vec<Vec<f64>> = (0..n).map(|_| self.sample_noise(mode, rng)).collect();
        let states = Matrix::from_rows(&vec![state.to_vec(); n]);
        let acts = self.act_batch(&states, &Matrix::from_rows(&noise))?;
        Ok((0..n).map(|r| acts.row(r).to_vec()).collect())
    }
}

/// `pi(s, xi) = rescale(tanh(mlp(s ++ xi)))`.
#[derive(Clone, Debug)]
pub struct PushForwardPolicy {
    pub net: MlpSpec,
    pub params: ParamVector,
    pub noise_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    state_dim: usize,
}

impl PushForwardPolicy {
    /// Noise dimension equals the action dimension.
    pub fn new(state_dim: usize, action_low: Vec<f64>, action_high: Vec<f64>, hidden: Vec<usize>, rng: &mut impl Rng) -> Result<Self> {
        let action_dim = action_low.len();
        Self::with_noise_dim(state_dim, action_dim, action_low, action_high, hidden, rng)
    }

    pub fn with_noise_dim(
        state_dim: usize,
        noise_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        hidden: Vec<usize>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if action_low.len() != action_high.len() || action_low.iter().zip(&action_high).any(|(l, h)| l >= h) {
            return Err(PacerError::config("action box must satisfy low < high componentwise"));
        }
        let net = MlpSpec::new(state_dim + noise_dim, hidden, action_low.len(), Activation::Tanh);
        net.validate()?;
        let params = net.init_params(rng);
        Ok(PushForwardPolicy {
            net,
            params,
            noise_dim,
            action_low,
            action_high,
            state_dim,
        })
    }

    pub fn from_params(state_dim: usize, noise_dim: usize, action_low: Vec<f64>, action_high: Vec<f64>, hidden: Vec<usize>, params: ParamVector) -> Result<Self> {
        let net = MlpSpec::new(state_dim + noise_dim, hidden, action_low.len(), Activation::Tanh);
        net.validate()?;
        net.check_params(&params)?;
        Ok(PushForwardPolicy {
            net,
            params,
            noise_dim,
            action_low,
            action_high,
            state_dim,
        })
    }

    /// Zeroes the output layer so every action sits at the box midpoint.
    pub fn zero_output_layer(&mut self) {
        let n = self.params.layout().len();
        self.params.layer_mut(n - 2).iter_mut().for_each(|v| *v = 0.0);
        self.params.layer_mut(n - 1).iter_mut().for_each(|v| *v = 0.0);
    }
}

impl StochasticActor for PushForwardPolicy {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    fn normalized_actions(&self, tape: &mut Tape, vars: &ParamVars, states: Var, noise: Var) -> Result<Var> {
        let input = tape.concat_cols(states, noise);
        mlp_apply(&self.net, tape, vars, 0, input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::gradcheck::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(seed: u64) -> PushForwardPolicy {
        PushForwardPolicy::new(3, vec![-2.0], vec![2.0], vec![16, 16], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn std_of(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
    }

    #[test]
    fn noise_standard_deviations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (mode, target, tol) in [(NoiseMode::Eval, 0.5, 0.002), (NoiseMode::Train, 1.0, 0.004)] {
            let draws: Vec<f64> = (0..1_000_000).flat_map(|_| sample_normal_noise(1, mode, &mut rng)).collect();
            let s = std_of(&draws);
            assert!((s - target).abs() < tol, "{mode:?}: {s}");
        }
    }

    #[test]
    fn noise_is_reproducible() {
        let p = policy(0);
        let a = p.sample_noise(NoiseMode::Train, &mut ChaCha8Rng::seed_from_u64(5));
        let b = p.sample_noise(NoiseMode::Train, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn zero_output_layer_gives_midpoint() {
        let mut p = PushForwardPolicy::new(2, vec![-2.0, 0.0], vec![2.0, 1.0], vec![8], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        p.zero_output_layer();
        for k in 0..10 {
            let s = [k as f64, -1.0];
            let a = p.act(&s, &[0.3 * k as f64, -1.0]).unwrap();
            assert_eq!(a, vec![0.0, 0.5]);
        }
    }

    #[test]
    fn saturated_output_stays_inside_box() {
        let mut p = policy(2);
        p.params.values_mut().iter_mut().for_each(|v| *v *= 1e3);
        for k in 0..100 {
            let a = p.act(&[k as f64, 1.0, -2.0], &[k as f64 - 50.0]).unwrap();
            assert!(a[0] <= 2.0 && a[0] >= -2.0);
        }
        assert_eq!(rescale_action(&[1.0 - 1e-17], &[-2.0], &[2.0]), vec![2.0]);
        assert!(rescale_action(&[1.0 - 1e-9], &[-2.0], &[2.0])[0] < 2.0);
    }

    #[test]
    fn action_gradient_matches_finite_differences() {
        let p = policy(3);
        let s = Matrix::row_vector(&[0.2, -0.4, 0.9]);
        let xi = Matrix::row_vector(&[0.7]);
        let mut tape = Tape::new();
        let vars = tape.register(&p.params, true);
        let sv = tape.constant(s.clone());
        let xv = tape.variable(xi.clone());
        let u = p.normalized_actions(&mut tape, &vars, sv, xv).unwrap();
        let scaled = tape.scale(u, 2.0);
        let g = tape.backward(scaled, &Matrix::scalar(1.0)).unwrap();
        let grad = g.params(&p.params, &vars);
        let h = 1e-5;
        for k in 0..p.params.len() {
            let mut plus = p.clone();
            plus.params.values_mut()[k] += h;
            let mut minus = p.clone();
            minus.params.values_mut()[k] -= h;
            let fd = (plus.act(s.row(0), xi.row(0)).unwrap()[0] - minus.act(s.row(0), xi.row(0)).unwrap()[0]) / (2.0 * h);
            assert!(relative_error(grad.values()[k], fd) < 1e-4, "k {k}");
        }
        // and with respect to the noise input
        let dxi = g.get(xv).unwrap().as_scalar();
        let fd = (p.act(s.row(0), &[0.7 + h]).unwrap()[0] - p.act(s.row(0), &[0.7 - h]).unwrap()[0]) / (2.0 * h);
        assert!(relative_error(dxi, fd) < 1e-4);
    }

    #[test]
    fn batch_of_one_equals_single_act() {
        let p = policy(4);
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let batch = p.sample_actions_batch(&[0.1, 0.2, 0.3], 1, NoiseMode::Train, &mut r1).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let xi = p.sample_noise(NoiseMode::Train, &mut r2);
        assert_eq!(batch[0], p.act(&[0.1, 0.2, 0.3], &xi).unwrap());
        assert!(p.sample_actions_batch(&[0.0; 3], 0, NoiseMode::Eval, &mut r2).is_err());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let p = policy(5);
        assert!(matches!(p.act(&[0.0; 2], &[0.0]), Err(PacerError::Config(_))));
        assert!(matches!(p.act(&[0.0; 3], &[0.0, 1.0]), Err(PacerError::Config(_))));
    }

    #[test]
    fn normalize_inverts_rescale() {
        let low = [-2.0, 0.0];
        let high = [2.0, 6.0];
        let a = rescale_action(&[0.25, -0.5], &low, &high);
        let u = normalize_action(&a, &low, &high);
        assert!((u[0] - 0.25).abs() < 1e-15 && (u[1] + 0.5).abs() < 1e-15);
    }
}
