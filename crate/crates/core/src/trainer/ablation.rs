//! Variant matrix: policy family crossed with exploration regularizer.

use rand::Rng;

use super::config::{PolicyKind, RegularizerKind, TrainConfig};
use crate::actor::{PushForwardPolicy, StochasticActor};
use crate::approximator::{mlp_apply, Activation, MlpSpec, ParamVars, ParamVector, Tape, Var};
use crate::error::{PacerError, Result};

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;

/// State-conditioned diagonal Gaussian, reparameterized as
/// `tanh(mu + sigma * xi)`.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    pub net: MlpSpec,
    pub params: ParamVector,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    state_dim: usize,
}

impl GaussianPolicy {
    pub fn new(state_dim: usize, action_low: Vec<f64>, action_high: Vec<f64>, hidden: Vec<usize>, rng: &mut impl Rng) -> Result<Self> {
        let net = Self::spec(state_dim, action_low.len(), hidden);
        net.validate()?;
        let params = net.init_params(rng);
        Ok(GaussianPolicy {
            net,
            params,
            action_low,
            action_high,
            state_dim,
        })
    }

    pub fn from_params(state_dim: usize, action_low: Vec<f64>, action_high: Vec<f64>, hidden: Vec<usize>, params: ParamVector) -> Result<Self> {
        let net = Self::spec(state_dim, action_low.len(), hidden);
        net.validate()?;
        net.check_params(&params)?;
        Ok(GaussianPolicy {
            net,
            params,
            action_low,
            action_high,
            state_dim,
        })
    }

    fn spec(state_dim: usize, action_dim: usize, hidden: Vec<usize>) -> MlpSpec {
        MlpSpec::new(state_dim, hidden, 2 * action_dim, Activation::Identity)
    }
}

impl StochasticActor for GaussianPolicy {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    fn noise_dim(&self) -> usize {
        self.action_low.len()
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
        let d = self.action_dim();
        let out = mlp_apply(&self.net, tape, vars, 0, states)?;
        let mu = tape.slice_cols(out, 0, d);
        let raw = tape.slice_cols(out, d, d);
        // squash log-std into [LOG_STD_MIN, LOG_STD_MAX]
        let t = tape.tanh(raw);
        let t = tape.add_scalar(t, 1.0);
        let t = tape.scale(t, 0.5 * (LOG_STD_MAX - LOG_STD_MIN));
        let log_std = tape.add_scalar(t, LOG_STD_MIN);
        let std = tape.exp(log_std);
        let spread = tape.mul(std, noise);
        let pre = tape.add(mu, spread);
        Ok(tape.tanh(pre))
    }
}

/// The actor of a run, either family.
#[derive(Clone, Debug)]
pub enum Policy {
    PushForward(PushForwardPolicy),
    Gaussian(GaussianPolicy),
}

impl Policy {
    pub fn new(kind: PolicyKind, state_dim: usize, low: Vec<f64>, high: Vec<f64>, hidden: Vec<usize>, rng: &mut impl Rng) -> Result<Self> {
        Ok(match kind {
            PolicyKind::Pushforward => Policy::PushForward(PushForwardPolicy::new(state_dim, low, high, hidden, rng)?),
            PolicyKind::Gaussian => Policy::Gaussian(GaussianPolicy::new(state_dim, low, high, hidden, rng)?),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::PushForward(_) => PolicyKind::Pushforward,
            Policy::Gaussian(_) => PolicyKind::Gaussian,
        }
    }

    pub fn from_params(kind: PolicyKind, state_dim: usize, low: Vec<f64>, high: Vec<f64>, hidden: Vec<usize>, params: ParamVector) -> Result<Self> {
        Ok(match kind {
            PolicyKind::Pushforward => {
                let noise_dim = low.len();
                Policy::PushForward(PushForwardPolicy::from_params(state_dim, noise_dim, low, high, hidden, params)?)
            }
            PolicyKind::Gaussian => Policy::Gaussian(GaussianPolicy::from_params(state_dim, low, high, hidden, params)?),
        })
    }

    pub fn as_actor(&self) -> &dyn StochasticActor {
        match self {
            Policy::PushForward(p) => p,
            Policy::Gaussian(p) => p,
        }
    }

    pub fn as_actor_mut(&mut self) -> &mut dyn StochasticActor {
        match self {
            Policy::PushForward(p) => p,
            Policy::Gaussian(p) => p,
        }
    }
}

/// Table label of a variant, e.g. `M1P1` for the full method. `G` marks
/// epsilon-greedy exploration.
pub fn variant_label(policy: PolicyKind, regularizer: RegularizerKind) -> String {
    let m = if regularizer == RegularizerKind::Mmd { 1 } else { 0 };
    let p = if policy == PolicyKind::Pushforward { 1 } else { 0 };
    let g = if regularizer == RegularizerKind::EpsilonGreedy { "G" } else { "" };
    format!("M{m}P{p}{g}")
}

/// All rows of the ablation table, full method first.
pub const VARIANTS: [(PolicyKind, RegularizerKind); 6] = [
    (PolicyKind::Pushforward, RegularizerKind::Mmd),
    (PolicyKind::Gaussian, RegularizerKind::Mmd),
    (PolicyKind::Pushforward, RegularizerKind::None),
    (PolicyKind::Pushforward, RegularizerKind::EpsilonGreedy),
    (PolicyKind::Gaussian, RegularizerKind::None),
    (PolicyKind::Gaussian, RegularizerKind::EpsilonGreedy),
];

/// A copy of `config` configured as the given variant.
pub fn ablation_variant(config: &TrainConfig, policy: PolicyKind, regularizer: RegularizerKind) -> Result<TrainConfig> {
    let c = TrainConfig {
        policy,
        regularizer,
        ..config.clone()
    };
    c.validate().map_err(|e| PacerError::Config(format!("variant {}: {e}", variant_label(policy, regularizer))))?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::gradcheck::relative_error;
    use crate::approximator::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn labels() {
        let got: Vec<String> = VARIANTS.iter().map(|(p, r)| variant_label(*p, *r)).collect();
        assert_eq!(got, ["M1P1", "M1P0", "M0P1", "M0P1G", "M0P0", "M0P0G"]);
    }

    #[test]
    fn identity_variant_is_unchanged() {
        let c = TrainConfig::default();
        assert_eq!(ablation_variant(&c, PolicyKind::Pushforward, RegularizerKind::Mmd).unwrap(), c);
        let bad = TrainConfig { epsilon: 0.0, ..c };
        assert!(ablation_variant(&bad, PolicyKind::Gaussian, RegularizerKind::EpsilonGreedy).is_err());
    }

    #[test]
    fn gaussian_actions_are_bounded_and_differentiable() {
        let p = GaussianPolicy::new(2, vec![-1.0; 2], vec![1.0; 2], vec![8], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let s = Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.5]]);
        let xi = Matrix::from_rows(&[vec![10.0, -10.0], vec![0.3, 0.2]]);
        let a = p.act_batch(&s, &xi).unwrap();
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        let f = |params: &ParamVector| {
            let q = GaussianPolicy::from_params(2, vec![-1.0; 2], vec![1.0; 2], vec![8], params.clone()).unwrap();
            q.act_batch(&s, &xi).unwrap().sum()
        };
        let mut tape = Tape::new();
        let vars = tape.register(&p.params, true);
        let sv = tape.constant(s.clone());
        let xv = tape.constant(xi.clone());
        let a = p.normalized_actions(&mut tape, &vars, sv, xv).unwrap();
        let total = tape.sum(a);
        let g = tape.backward(total, &Matrix::scalar(1.0)).unwrap().params(&p.params, &vars);
        for i in 0..p.params.len() {
            let mut hi = p.params.clone();
            hi.values_mut()[i] += 1e-6;
            let mut lo = p.params.clone();
            lo.values_mut()[i] -= 1e-6;
            let fd = (f(&hi) - f(&lo)) / 2e-6;
            assert!(relative_error(g.values()[i], fd) < 1e-4);
        }
    }
}
