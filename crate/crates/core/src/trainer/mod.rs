//! The training loop: distributional TD for the twin critics, reparameterized
//! utility gradient for the actor, and the adaptive regularizer weight.

pub mod ablation;
pub mod config;

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use ablation::{ablation_variant, variant_label, GaussianPolicy, Policy, VARIANTS};
pub use config::{PolicyKind, RegularizerKind, TrainConfig};

use crate::actor::{normalize_action, NoiseMode, StochasticActor};
use crate::approximator::{adam_step, AdamState, Matrix, ParamVars, ParamVector, Tape, Var};
use crate::critic::{critic_loss, Batch, IqnSpec, Quantiles, TwinCritics};
use crate::encourager::{batch_regularizer, uniform_self_mmd, MmdKernel};
use crate::envs::{make_env, EnvSpec, Environment, ObsNormalizer, Transition};
use crate::error::{PacerError, Result};
use crate::replay::ReplayBuffer;
use crate::utility::{distortion_weights, UtilityFunction};

pub const LOG_ALPHA_MIN: f64 = -13.815510557964274; // ln 1e-6
pub const LOG_ALPHA_MAX: f64 = 13.815510557964274;

/// Independent random streams of one run.
const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_REPLAY: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Everything a run mutates.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub env: EnvSpec,
    pub policy: Policy,
    pub critics: TwinCritics,
    pub log_alpha: f64,
    pub beta: f64,
    pub actor_opt: AdamState,
    pub critic_opt: [AdamState; 2],
    pub normalizer: ObsNormalizer,
    pub kernel: MmdKernel,
    pub gamma: f64,
    pub env_steps: usize,
    pub grad_steps: usize,
    pub last: StepMetrics,
    rng: ChaCha8Rng,
}

/// Averages reported by one or more gradient steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub d_m: f64,
    pub v_psi: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl StepMetrics {
    fn mean(items: &[StepMetrics]) -> StepMetrics {
        let n = items.len() as f64;
        let avg = |f: fn(&StepMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        StepMetrics {
            critic_loss: avg(|m| m.critic_loss),
            actor_loss: avg(|m| m.actor_loss),
            d_m: avg(|m| m.d_m),
            v_psi: avg(|m| m.v_psi),
            alpha: avg(|m| m.alpha),
            beta: avg(|m| m.beta),
        }
    }
}

/// One line of the metrics log. Training and evaluation columns are empty
/// when that part did not run at `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub wall_ms: u64,
    pub train: Option<StepMetrics>,
    pub eval: Option<(f64, f64)>,
}

impl TrainerState {
    pub fn new(env: &EnvSpec, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, STREAM_INIT);
        let policy = Policy::new(
            cfg.policy,
            env.state_dim,
            env.action_low.clone(),
            env.action_high.clone(),
            cfg.actor_hidden.clone(),
            &mut rng,
        )?;
        let spec = IqnSpec {
            state_dim: env.state_dim,
            action_dim: env.action_dim,
            hidden_dims: cfg.critic_hidden.clone(),
            cos_features: cfg.cos_features,
        };
        let critics = TwinCritics::new(spec, cfg.polyak, &mut rng)?;
        let kernel = match cfg.mmd_bandwidth_sq {
            Some(h) => MmdKernel::gaussian(h)?,
            None => MmdKernel::for_action_dim(env.action_dim),
        };
        let beta = match cfg.beta_init {
            Some(b) => b,
            None => (0.5 * uniform_self_mmd(&kernel, env.action_dim, cfg.n_mmd.max(2), 64, &mut rng)).max(cfg.beta_min),
        };
        let actor_opt = AdamState::for_params(policy.as_actor().params());
        let critic_opt = [
            AdamState::for_params(&critics.online[0].params),
            AdamState::for_params(&critics.online[1].params),
        ];
        Ok(TrainerState {
            env: env.clone(),
            policy,
            critics,
            log_alpha: cfg.alpha_init.ln(),
            beta,
            actor_opt,
            critic_opt,
            normalizer: ObsNormalizer::new(env.state_dim),
            kernel,
            gamma: cfg.gamma.unwrap_or(env.gamma_default),
            env_steps: 0,
            grad_steps: 0,
            last: StepMetrics::default(),
            rng: stream(cfg.seed, STREAM_TRAIN),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn actor(&self) -> &dyn StochasticActor {
        self.policy.as_actor()
    }

    /// Network-coordinate state, using frozen statistics.
    pub fn observe(&self, state: &[f64], normalize: bool) -> Vec<f64> {
        if normalize {
            self.normalizer.apply(state)
        } else {
            state.to_vec()
        }
    }

    /// Replay rows in network coordinates.
    pub fn make_batch(&self, items: &[&Transition], normalize: bool) -> Batch {
        let (low, high) = (&self.env.action_low, &self.env.action_high);
        let rows = |f: &dyn Fn(&Transition) -> Vec<f64>| Matrix::from_rows(&items.iter().map(|t| f(t)).collect::<Vec<_>>());
        Batch {
            states: rows(&|t| self.observe(&t.state, normalize)),
            actions: rows(&|t| normalize_action(&t.action, low, high)),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states: rows(&|t| self.observe(&t.next_state, normalize)),
        }
    }
}

/// What the actor objective needs besides the networks.
#[derive(Clone, Debug)]
pub struct ActorObjective {
    pub utility: UtilityFunction,
    pub quantiles: usize,
    pub alpha: f64,
    /// `None` drops the regularizer term.
    pub mmd: Option<MmdSettings>,
}

#[derive(Clone, Copy, Debug)]
pub struct MmdSettings {
    pub kernel: MmdKernel,
    pub n_samples: usize,
    pub max_states: Option<usize>,
}

impl ActorObjective {
    pub fn from_state(state: &TrainerState, cfg: &TrainConfig) -> Self {
        ActorObjective {
            utility: cfg.utility,
            quantiles: cfg.quantiles,
            alpha: state.alpha(),
            mmd: (cfg.regularizer == RegularizerKind::Mmd).then_some(MmdSettings {
                kernel: state.kernel,
                n_samples: cfg.n_mmd,
                max_states: cfg.mmd_states,
            }),
        }
    }
}

/// Noise and quantile levels of one actor-loss evaluation.
#[derive(Clone, Debug)]
pub struct ActorInputs {
    pub noise: Matrix,
    pub quantiles: Vec<Quantiles>,
}

impl ActorInputs {
    pub fn sample(actor: &dyn StochasticActor, rows: usize, k: usize, rng: &mut dyn RngCore) -> Self {
        let noise: Vec<Vec<f64>> = (0..rows).map(|_| actor.sample_noise(NoiseMode::Train, rng)).collect();
        let mut rng = rng;
        let quantiles = (0..rows).map(|_| Quantiles::sample(k, &mut rng)).collect();
        ActorInputs {
            noise: Matrix::from_rows(&noise),
            quantiles,
        }
    }

    fn tau_hats(&self) -> Matrix {
        Matrix::from_rows(&self.quantiles.iter().map(|q| q.tau_hats().to_vec()).collect::<Vec<_>>())
    }

    /// Per-atom weights divided by the batch size, so that the weighted sum
    /// is the batch mean of the distorted value.
    fn value_weights(&self, utility: &UtilityFunction) -> Matrix {
        let b = self.quantiles.len() as f64;
        let rows: Vec<Vec<f64>> = self
            .quantiles
            .iter()
            .map(|q| distortion_weights(utility, q).into_iter().map(|w| w / b).collect())
            .collect();
        Matrix::from_rows(&rows)
    }
}

/// Recorded actor loss with the scalar values of its terms.
pub struct ActorLoss {
    pub loss: Var,
    pub vars: ParamVars,
    pub v_psi: f64,
    pub d_m: f64,
}

/// Batch-mean distorted value of `z_min(s, a)` over the online twins, for
/// actions given as a tape node.
fn value_term(tape: &mut Tape, critics: &TwinCritics, utility: &UtilityFunction, states: Var, actions: Var, inputs: &ActorInputs) -> Result<Var> {
    let sa = tape.concat_cols(states, actions);
    let taus = tape.constant(inputs.tau_hats());
    let v0 = tape.register(&critics.online[0].params, false);
    let v1 = tape.register(&critics.online[1].params, false);
    let z0 = critics.online[0].apply(tape, &v0, sa, taus)?;
    let z1 = critics.online[1].apply(tape, &v1, sa, taus)?;
    let z = tape.min(z0, z1);
    let weighted = tape.mul_const(z, inputs.value_weights(utility));
    Ok(tape.sum(weighted))
}

/// `mean_b(-V_psi(s_b, pi(s_b, xi_b))) + alpha * d_m`, with the critic held
/// constant. Noise and quantile levels come from `inputs`; the regularizer
/// draws from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss_with(
    tape: &mut Tape,
    actor: &dyn StochasticActor,
    critics: &TwinCritics,
    objective: &ActorObjective,
    states: &Matrix,
    inputs: &ActorInputs,
    rng: &mut dyn RngCore,
) -> Result<ActorLoss> {
    let vars = tape.register(actor.params(), true);
    actor_loss_on(tape, actor, vars, critics, objective, states, inputs, rng)
}

/// [`actor_loss_with`] on actor parameters already registered as `vars`.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss_on(
    tape: &mut Tape,
    actor: &dyn StochasticActor,
    vars: ParamVars,
    critics: &TwinCritics,
    objective: &ActorObjective,
    states: &Matrix,
    inputs: &ActorInputs,
    rng: &mut dyn RngCore,
) -> Result<ActorLoss> {
    if states.rows() == 0 {
        return Err(PacerError::Usage("actor loss needs a nonempty batch".into()));
    }
    let s = tape.constant(states.clone());
    let xi = tape.constant(inputs.noise.clone());
    let actions = actor.normalized_actions(tape, &vars, s, xi)?;
    let v = value_term(tape, critics, &objective.utility, s, actions, inputs)?;
    let v_psi = tape.value(v).as_scalar();
    if !v_psi.is_finite() {
        return Err(PacerError::training("actor_loss.v_psi", format!("value term is {v_psi}")));
    }
    let mut loss = tape.neg(v);
    let mut d_m = 0.0;
    if let Some(m) = &objective.mmd {
        let take = m.max_states.map_or(states.rows(), |k| k.min(states.rows()));
        let sub = Matrix::from_rows(&(0..take).map(|r| states.row(r).to_vec()).collect::<Vec<_>>());
        let d = batch_regularizer(tape, actor, &vars, &sub, &m.kernel, m.n_samples, rng)?;
        d_m = tape.value(d).as_scalar();
        if !d_m.is_finite() {
            return Err(PacerError::training("actor_loss.d_m", format!("regularizer is {d_m}")));
        }
        let weighted = tape.scale(d, objective.alpha);
        loss = tape.add(loss, weighted);
    }
    Ok(ActorLoss { loss, vars, v_psi, d_m })
}

/// Draws fresh inputs and records the actor loss.
pub fn actor_loss(
    tape: &mut Tape,
    actor: &dyn StochasticActor,
    critics: &TwinCritics,
    objective: &ActorObjective,
    states: &Matrix,
    rng: &mut dyn RngCore,
) -> Result<ActorLoss> {
    let inputs = ActorInputs::sample(actor, states.rows(), objective.quantiles, rng);
    actor_loss_with(tape, actor, critics, objective, states, &inputs, rng)
}

/// Gradient of the actor loss with respect to the actor parameters, obtained
/// by reverse mode through `pi` into the critic's action input.
pub fn suvpg_gradient(
    actor: &dyn StochasticActor,
    critics: &TwinCritics,
    objective: &ActorObjective,
    states: &Matrix,
    rng: &mut dyn RngCore,
) -> Result<(ParamVector, f64, ActorLoss)> {
    let mut tape = Tape::new();
    let l = actor_loss(&mut tape, actor, critics, objective, states, rng)?;
    let value = tape.value(l.loss).as_scalar();
    let g = tape.backward(l.loss, &Matrix::scalar(1.0))?;
    Ok((g.params(actor.params(), &l.vars), value, l))
}

/// Value-term gradient assembled explicitly as
/// `-sum_b (d pi(s_b, xi_b) / d theta)^T grad_a V(s_b, a)|_{a = pi}`.
pub fn suvpg_product_form(actor: &dyn StochasticActor, critics: &TwinCritics, utility: &UtilityFunction, states: &Matrix, inputs: &ActorInputs) -> Result<ParamVector> {
    let actions = {
        let mut tape = Tape::new();
        let vars = tape.register(actor.params(), false);
        let s = tape.constant(states.clone());
        let xi = tape.constant(inputs.noise.clone());
        let a = actor.normalized_actions(&mut tape, &vars, s, xi)?;
        tape.value(a).clone()
    };
    let grad_a = {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone());
        let a = tape.variable(actions);
        let v = value_term(&mut tape, critics, utility, s, a, inputs)?;
        let g = tape.backward(v, &Matrix::scalar(1.0))?;
        g.get(a).cloned().ok_or_else(|| PacerError::training("suvpg", "no action gradient"))?
    };
    let mut tape = Tape::new();
    let vars = tape.register(actor.params(), true);
    let s = tape.constant(states.clone());
    let xi = tape.constant(inputs.noise.clone());
    let a = actor.normalized_actions(&mut tape, &vars, s, xi)?;
    let g = tape.backward(a, &grad_a.map(|v| -v))?;
    Ok(g.params(actor.params(), &vars))
}

/// `log(alpha) * (beta - d_m)` and its derivative in `log(alpha)`.
pub fn alpha_loss(log_alpha: f64, beta: f64, d_m: f64) -> (f64, f64) {
    (log_alpha * (beta - d_m), beta - d_m)
}

/// One descent step on `log(alpha)`, clamped so that alpha stays in
/// `[1e-6, 1e6]`.
pub fn alpha_step(log_alpha: f64, beta: f64, d_m: f64, lr: f64) -> f64 {
    let (_, grad) = alpha_loss(log_alpha, beta, d_m);
    (log_alpha - lr * grad).clamp(LOG_ALPHA_MIN, LOG_ALPHA_MAX)
}

/// `beta - step * g` floored at `beta_min`, with
/// `g = (sign(alpha_max - alpha) + sign(alpha_min - alpha)) / 2` taken as zero
/// on the closed band `[alpha_min, alpha_max]`.
pub fn beta_update(beta: f64, alpha: f64, alpha_min: f64, alpha_max: f64, beta_step: f64, beta_min: f64) -> f64 {
    let g = if alpha > alpha_max {
        -1.0
    } else if alpha < alpha_min {
        1.0
    } else {
        0.0
    };
    (beta - beta_step * g).max(beta_min)
}

/// One gradient step of every learner, in order: critic, actor (every
/// `policy_delay` steps), alpha, beta, target networks.
pub fn train_step(state: &mut TrainerState, buffer: &mut ReplayBuffer, cfg: &TrainConfig) -> Result<StepMetrics> {
    let items = buffer.sample_batch(cfg.batch_size)?;
    let batch = state.make_batch(&items, cfg.normalize_obs);

    let mut tape = Tape::new();
    let (loss, vars) = critic_loss(
        &mut tape,
        &state.critics,
        state.policy.as_actor(),
        &batch,
        &cfg.quantile_params(),
        state.gamma,
        &cfg.utility,
        &mut state.rng,
    )?;
    let c_loss = tape.value(loss).as_scalar();
    let grads = tape.backward(loss, &Matrix::scalar(1.0))?;
    for (i, v) in vars.iter().enumerate() {
        let g = grads.params(&state.critics.online[i].params, v);
        adam_step(&mut state.critics.online[i].params, &g, &mut state.critic_opt[i], cfg.lr_critic)?;
    }
    drop(tape);

    let mut metrics = state.last;
    metrics.critic_loss = c_loss;
    if state.grad_steps % cfg.policy_delay == 0 {
        let objective = ActorObjective::from_state(state, cfg);
        let (g, value, l) = suvpg_gradient(state.policy.as_actor(), &state.critics, &objective, &batch.states, &mut state.rng)?;
        if !value.is_finite() {
            return Err(PacerError::training("actor_loss", format!("loss is {value}")));
        }
        let actor = state.policy.as_actor_mut();
        let mut opt = std::mem::replace(&mut state.actor_opt, AdamState::new(0));
        adam_step(actor.params_mut(), &g, &mut opt, cfg.lr_actor)?;
        state.actor_opt = opt;
        metrics.actor_loss = value;
        metrics.v_psi = l.v_psi;
        metrics.d_m = l.d_m;
    }

    if cfg.regularizer == RegularizerKind::Mmd {
        state.log_alpha = alpha_step(state.log_alpha, state.beta, metrics.d_m, cfg.lr_alpha);
        state.beta = beta_update(state.beta, state.alpha(), cfg.alpha_min, cfg.alpha_max, cfg.beta_step, cfg.beta_min);
        metrics.alpha = state.alpha();
        metrics.beta = state.beta;
    } else {
        metrics.alpha = 0.0;
        metrics.beta = 0.0;
    }
    state.critics.polyak_update(cfg.polyak);
    state.grad_steps += 1;
    state.last = metrics;
    Ok(metrics)
}

/// Summary of evaluation episodes (undiscounted returns).
#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalSummary {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        EvalSummary { returns, mean, std }
    }
}

/// Runs one episode with the given noise mode; states are stored raw.
pub fn rollout(
    actor: &dyn StochasticActor,
    normalizer: Option<&ObsNormalizer>,
    env: &mut dyn Environment,
    seed: Option<u64>,
    mode: NoiseMode,
    rng: &mut dyn RngCore,
) -> Result<Vec<Transition>> {
    let mut s = env.reset(seed);
    let mut out = Vec::with_capacity(env.spec().max_episode_steps);
    loop {
        let obs = normalizer.map_or_else(|| s.clone(), |n| n.apply(&s));
        let noise = actor.sample_noise(mode, rng);
        let a = actor.act(&obs, &noise)?;
        let step = env.step(&a)?;
        let done = step.done;
        out.push(Transition {
            state: s,
            action: a,
            reward: step.reward,
            next_state: step.next_state.clone(),
            done,
        });
        s = step.next_state;
        if done {
            return Ok(out);
        }
    }
}

/// `episodes` eval-mode episodes reset with seeds `base_seed + i`.
pub fn evaluate(
    actor: &dyn StochasticActor,
    normalizer: Option<&ObsNormalizer>,
    env: &mut dyn Environment,
    episodes: usize,
    base_seed: u64,
    rng: &mut dyn RngCore,
) -> Result<(EvalSummary, Vec<Vec<Transition>>)> {
    let mut returns = Vec::with_capacity(episodes);
    let mut trajectories = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let traj = rollout(actor, normalizer, env, Some(base_seed + i as u64), NoiseMode::Eval, rng)?;
        returns.push(traj.iter().map(|t| t.reward).sum());
        trajectories.push(traj);
    }
    Ok((EvalSummary::from_returns(returns), trajectories))
}

fn uniform_action(spec: &EnvSpec, rng: &mut impl Rng) -> Vec<f64> {
    spec.action_low
        .iter()
        .zip(&spec.action_high)
        .map(|(lo, hi)| rng.random_range(*lo..=*hi))
        .collect()
}

/// Seed offset of evaluation episodes, kept away from training resets.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

/// Interleaves environment interaction with gradient updates. `observer`
/// sees every emitted metrics row together with the current state.
pub fn run_training(
    make: &dyn Fn() -> Box<dyn Environment>,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&TrainerState, &MetricsRow) -> Result<()>,
) -> Result<(TrainerState, Vec<MetricsRow>)> {
    let mut env = make();
    let mut eval_env = make();
    let spec = env.spec().clone();
    let mut state = TrainerState::new(&spec, cfg)?;
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity, stream(cfg.seed, STREAM_REPLAY).random())?;
    let mut explore = stream(cfg.seed, STREAM_EXPLORE);
    let mut eval_rng = stream(cfg.seed, STREAM_EVAL);
    let start = Instant::now();
    let mut rows = Vec::new();

    let mut s = env.reset(Some(cfg.seed));
    for n in 0..cfg.total_steps {
        if cfg.normalize_obs {
            state.normalizer.update(&s);
        }
        let greedy_miss = cfg.regularizer == RegularizerKind::EpsilonGreedy && explore.random_bool(cfg.epsilon);
        let action = if n < cfg.warmup || greedy_miss {
            uniform_action(&spec, &mut explore)
        } else {
            let obs = state.observe(&s, cfg.normalize_obs);
            let noise = state.actor().sample_noise(NoiseMode::Train, &mut explore);
            state.actor().act(&obs, &noise)?
        };
        let out = env.step(&action)?;
        buffer.push(Transition {
            state: s,
            action,
            reward: out.reward,
            next_state: out.next_state.clone(),
            done: out.done,
        });
        s = if out.done { env.reset(None) } else { out.next_state };
        state.env_steps = n + 1;

        let step = n + 1;
        let mut train = None;
        if step % cfg.update_every == 0 && step >= cfg.warmup && buffer.len() >= cfg.batch_size {
            let mut ms = Vec::with_capacity(cfg.update_every);
            for _ in 0..cfg.update_every {
                ms.push(train_step(&mut state, &mut buffer, cfg)?);
            }
            train = Some(StepMetrics::mean(&ms));
        }
        let mut eval = None;
        if step % cfg.eval_every == 0 || step == cfg.total_steps {
            let norm = cfg.normalize_obs.then_some(&state.normalizer);
            let base = EVAL_SEED_OFFSET + cfg.seed * 1000;
            let (summary, _) = evaluate(state.actor(), norm, eval_env.as_mut(), cfg.eval_episodes, base, &mut eval_rng)?;
            eval = Some((summary.mean, summary.std));
        }
        if train.is_some() || eval.is_some() {
            let row = MetricsRow {
                step,
                wall_ms: if cfg.log_wall_time { start.elapsed().as_millis() as u64 } else { 0 },
                train,
                eval,
            };
            observer(&state, &row)?;
            rows.push(row);
        }
    }
    Ok((state, rows))
}

/// [`run_training`] on a named environment without an observer.
pub fn run_training_named(env: &str, cfg: &TrainConfig) -> Result<(TrainerState, Vec<MetricsRow>)> {
    make_env(env)?;
    let name = env.to_string();
    run_training(&move || make_env(&name).expect("checked above"), cfg, &mut |_, _| Ok(()))
}
