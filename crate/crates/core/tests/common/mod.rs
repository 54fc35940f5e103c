//! Checks shared by the integration tests and the acceptance runner. Each
//! returns whether it passed plus a one-line summary of the measurements.
#![allow(dead_code)]

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pacer::actor::{PushForwardPolicy, StochasticActor};
use pacer::approximator::gradcheck::check_against;
use pacer::approximator::{Matrix, ParamVars, Tape};
use pacer::critic::{huber_quantile_loss, IqnSpec, QuantileReturn, Quantiles, TwinCritics};
use pacer::encourager::{mmd, MmdKernel};
use pacer::envs::{EnvSpec, Transition};
use pacer::replay::ReplayBuffer;
use pacer::trainer::{
    actor_loss_on, actor_loss_with, alpha_step, beta_update, suvpg_product_form, train_step, ActorInputs, ActorObjective, MmdSettings,
    RegularizerKind, TrainConfig, TrainerState,
};
use pacer::utility::{distorted_expectation, distortion_weight_check, distortion_weights, UtilityFunction};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

/// Taped actor gradient against central differences and against the
/// explicit chain-rule product on random tiny networks.
pub fn gradient_correctness(pairs: u64) -> Outcome {
    let start = Instant::now();
    let mut worst_fd: f64 = 0.0;
    let mut worst_product: f64 = 0.0;
    for seed in 0..pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let state_dim = rng.random_range(1..4);
        let action_dim = rng.random_range(1..3);
        let low: Vec<f64> = (0..action_dim).map(|_| rng.random_range(-2.0..-0.5)).collect();
        let high: Vec<f64> = low.iter().map(|l| l + rng.random_range(1.0..3.0)).collect();
        let actor = PushForwardPolicy::new(state_dim, low, high, vec![rng.random_range(3..7)], &mut rng).unwrap();
        let spec = IqnSpec {
            state_dim,
            action_dim,
            hidden_dims: vec![rng.random_range(3..7)],
            cos_features: 4,
        };
        let critics = TwinCritics::new(spec, 0.005, &mut rng).unwrap();
        let batch = rng.random_range(2..5);
        let rows: Vec<Vec<f64>> = (0..batch).map(|_| (0..state_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let states = Matrix::from_rows(&rows);
        let inputs = ActorInputs::sample(&actor, batch, 5, &mut rng);
        let utility = if seed % 2 == 0 { UtilityFunction::identity() } else { UtilityFunction::cvar(0.5).unwrap() };
        let full = ActorObjective {
            utility,
            quantiles: 5,
            alpha: rng.random_range(0.1..2.0),
            mmd: Some(MmdSettings {
                kernel: MmdKernel::for_action_dim(action_dim),
                n_samples: 5,
                max_states: None,
            }),
        };
        let reg_seed = rng.random::<u64>();

        let mut tape = Tape::new();
        let l = actor_loss_with(&mut tape, &actor, &critics, &full, &states, &inputs, &mut ChaCha8Rng::seed_from_u64(reg_seed)).unwrap();
        let taped = tape.backward(l.loss, &Matrix::scalar(1.0)).unwrap().params(actor.params(), &l.vars);
        let f = |tape: &mut Tape, vars: &ParamVars| {
            let mut r = ChaCha8Rng::seed_from_u64(reg_seed);
            Ok(actor_loss_on(tape, &actor, vars.clone(), &critics, &full, &states, &inputs, &mut r)?.loss)
        };
        let report = check_against(&f, actor.params(), taped.values(), 1e-3).unwrap();
        worst_fd = worst_fd.max(report.max_rel_error);

        let value_only = ActorObjective { mmd: None, alpha: 0.0, ..full.clone() };
        let mut tape = Tape::new();
        let l = actor_loss_with(&mut tape, &actor, &critics, &value_only, &states, &inputs, &mut rng).unwrap();
        let taped = tape.backward(l.loss, &Matrix::scalar(1.0)).unwrap().params(actor.params(), &l.vars);
        let product = suvpg_product_form(&actor, &critics, &utility, &states, &inputs).unwrap();
        for (a, b) in taped.values().iter().zip(product.values()) {
            worst_product = worst_product.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst_fd < 1e-3 && worst_product <= 1e-10 && secs < 30.0,
        format!("{pairs} pairs: max FD rel err {worst_fd:.2e} (< 1e-3), product form diff {worst_product:.1e} (<= 1e-10), {secs:.1}s (< 30s)"),
    )
}

/// Direct piecewise evaluation of the asymmetric Huber quantile loss.
fn reference_huber(delta: f64, tau: f64, kappa: f64) -> f64 {
    let huber = if delta.abs() <= kappa { 0.5 * delta * delta } else { kappa * (delta.abs() - 0.5 * kappa) };
    let indicator = if delta < 0.0 { 1.0 } else { 0.0 };
    (tau - indicator).abs() * huber / kappa
}

pub fn quantile_huber(trials: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let delta = rng.random_range(-10.0..10.0);
        let tau = rng.random_range(0.0..1.0);
        let kappa = rng.random_range(0.05..5.0);
        let a = huber_quantile_loss(delta, tau, kappa);
        let b = reference_huber(delta, tau, kappa);
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    let grid: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
    let mut monotone = true;
    for delta in [-3.0, -0.4, 0.4, 3.0] {
        let vals: Vec<f64> = grid.iter().map(|t| huber_quantile_loss(delta, *t, 1.0)).collect();
        let ok = vals.windows(2).all(|w| if delta > 0.0 { w[1] > w[0] } else { w[1] < w[0] });
        monotone &= ok;
    }
    Outcome::new(
        worst <= 1e-12 && monotone,
        format!("{trials} triples: max err {worst:.1e} (<= 1e-12); tau-monotonicity on 99-point grid: {monotone}"),
    )
}

pub fn mmd_estimator(seeds: u64) -> Outcome {
    let start = Instant::now();
    let k1 = MmdKernel::gaussian(1.0).unwrap();
    let same = vec![vec![0.3], vec![-1.2], vec![2.0]];
    let zero = mmd(&k1, &same, &same).unwrap();
    let pair = mmd(&k1, &[vec![0.0]], &[vec![1.0]]).unwrap();
    let mut separated = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |mu: f64, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            let n = Normal::new(mu, 1.0).unwrap();
            (0..500).map(|_| vec![n.sample(rng)]).collect()
        };
        let base = draw(0.0, &mut rng);
        let far = draw(3.0, &mut rng);
        let base2 = draw(0.0, &mut rng);
        let near = draw(0.1, &mut rng);
        if mmd(&k1, &base, &far).unwrap() > mmd(&k1, &base2, &near).unwrap() {
            separated += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let need = (seeds * 99).div_ceil(100);
    Outcome::new(
        zero.abs() < 1e-12 && (pair - 0.8871).abs() <= 1e-4 && separated >= need && secs < 60.0,
        format!("identical sets {zero:.1e}; {{0}} vs {{1}} = {pair:.5} (0.8871 +- 1e-4); separation {separated}/{seeds} (>= {need}); {secs:.1}s (< 60s)"),
    )
}

/// Single-state chain with Bernoulli(1/2) rewards. The discounted return at
/// `gamma = 1/2` is uniform on `[0, 2]`.
fn coin_flip_spec() -> EnvSpec {
    EnvSpec {
        name: "coin_flip".into(),
        state_dim: 1,
        action_dim: 1,
        action_low: vec![-1.0],
        action_high: vec![1.0],
        max_episode_steps: 1,
        gamma_default: 0.5,
    }
}

/// `W1` between two quantile functions given as sorted atoms on cells.
pub fn wasserstein1(q: &QuantileReturn, sorted_samples: &[f64]) -> f64 {
    let q = q.sorted();
    let grid = 20_000;
    let taus = q.quantiles.taus().to_vec();
    let mut cell = 0;
    let mut total = 0.0;
    for i in 0..grid {
        let u = (i as f64 + 0.5) / grid as f64;
        while cell + 1 < q.atoms.len() && u >= taus[cell + 1] {
            cell += 1;
        }
        let emp = sorted_samples[((u * sorted_samples.len() as f64) as usize).min(sorted_samples.len() - 1)];
        total += (q.atoms[cell] - emp).abs();
    }
    total / grid as f64
}

/// Fills a buffer with single-state transitions and runs `steps` updates.
fn train_single_state(cfg: &TrainConfig, steps: usize, reward: &mut dyn FnMut(&mut ChaCha8Rng) -> f64) -> TrainerState {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 100);
    let mut state = TrainerState::new(&coin_flip_spec(), cfg).unwrap();
    let mut buffer = ReplayBuffer::new(10_000, 9).unwrap();
    for _ in 0..10_000 {
        let r = reward(&mut rng);
        buffer.push(Transition {
            state: vec![0.0],
            action: vec![rng.random_range(-1.0..1.0)],
            reward: r,
            next_state: vec![0.0],
            done: true,
        });
    }
    for _ in 0..steps {
        train_step(&mut state, &mut buffer, cfg).unwrap();
    }
    state
}

/// Constant unit reward: every atom converges to `1 / (1 - gamma) = 2`.
pub fn geometric_fixed_point(steps: usize) -> Outcome {
    let cfg = TrainConfig {
        gamma: Some(0.5),
        batch_size: 32,
        quantiles: 16,
        polyak: 0.05,
        policy_delay: steps + 1,
        actor_hidden: vec![8],
        critic_hidden: vec![32, 32],
        cos_features: 32,
        normalize_obs: false,
        regularizer: RegularizerKind::None,
        seed: 2,
        ..TrainConfig::default()
    };
    let state = train_single_state(&cfg, steps, &mut |_| 1.0);
    let q = state.critics.online[0].quantile_return(&[0.0], &[0.0], Quantiles::even_grid(32)).unwrap();
    let spread = q.atoms.iter().map(|z| (z - 2.0).abs()).fold(0.0, f64::max);
    Outcome::new(
        (q.mean() - 2.0).abs() <= 0.1,
        format!("{steps} steps: atom mean {:.4} (2 +- 0.1), max atom offset {spread:.3}", q.mean()),
    )
}

pub fn td_fixed_point(max_steps: usize) -> Outcome {
    let start = Instant::now();
    let gamma: f64 = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut oracle: Vec<f64> = (0..1_000_000)
        .map(|_| (0..50).map(|t| if rng.random_bool(0.5) { gamma.powi(t) } else { 0.0 }).sum())
        .collect();
    oracle.sort_by(f64::total_cmp);

    // A small Huber threshold keeps the fit a quantile regression rather
    // than an expectile-like one on this narrow return range.
    let cfg = TrainConfig {
        gamma: Some(gamma),
        batch_size: 32,
        quantiles: 16,
        kappa: 0.02,
        polyak: 0.05,
        policy_delay: max_steps + 1,
        actor_hidden: vec![8],
        critic_hidden: vec![32, 32],
        cos_features: 32,
        normalize_obs: false,
        regularizer: RegularizerKind::None,
        seed: 5,
        ..TrainConfig::default()
    };
    let state = train_single_state(&cfg, max_steps, &mut |rng| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let grid = Quantiles::even_grid(32);
    let mut worst: f64 = 0.0;
    for a in [-0.5, 0.0, 0.5] {
        let q = state.critics.online[0].quantile_return(&[0.0], &[a], grid.clone()).unwrap();
        worst = worst.max(wasserstein1(&q, &oracle));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 0.1 && secs < 300.0,
        format!("{max_steps} gradient steps: W1 to 1e6-rollout oracle {worst:.4} (<= 0.1), {secs:.1}s (< 300s)"),
    )
}

pub fn distortion_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cvar1_exact = true;
    let mut monotone = true;
    for _ in 0..200 {
        let q = Quantiles::sample(16, &mut rng);
        let atoms: Vec<f64> = (0..q.num_atoms()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let z = QuantileReturn::new(q, atoms).unwrap().sorted();
        let one = distorted_expectation(&UtilityFunction::cvar(1.0).unwrap(), &z);
        let mean = distorted_expectation(&UtilityFunction::identity(), &z);
        cvar1_exact &= one == mean && (mean - z.mean()).abs() < 1e-12;
        let levels = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];
        let vals: Vec<f64> = levels.iter().map(|l| distorted_expectation(&UtilityFunction::cvar(*l).unwrap(), &z)).collect();
        monotone &= vals.windows(2).all(|w| w[0] <= w[1] + 1e-12);
    }
    let taus: Vec<f64> = (0..=10).map(|i| (i as f64 / 10.0).powi(2)).collect();
    let identity_sum = distortion_weight_check(&UtilityFunction::identity(), &taus).unwrap();
    // The cell straddling the level is either fully in or fully out, so a
    // single draw misses by up to its width; judge the sampler over many draws.
    let draws = 200;
    let sums: Vec<f64> = (0..draws)
        .map(|_| distortion_weights(&UtilityFunction::cvar(0.25).unwrap(), &Quantiles::sample(1000, &mut rng)).iter().sum())
        .collect();
    let within = sums.iter().filter(|s| (*s - 1.0).abs() <= 0.01).count();
    let mean_sum = sums.iter().sum::<f64>() / draws as f64;
    let worst = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    Outcome::new(
        cvar1_exact && monotone && identity_sum == 1.0 && within * 100 >= 95 * draws && (mean_sum - 1.0).abs() <= 0.01,
        format!(
            "CVaR_1 == mean: {cvar1_exact}; monotone in level: {monotone}; identity weight sum {identity_sum}; \
             K=1000 CVaR-0.25 weight sums within 0.01 on {within}/{draws} draws (>= 95%), mean {mean_sum:.5}, worst miss {worst:.4}"
        ),
    )
}

pub fn adaptive_weights() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sign_ok = 0;
    let trials = 1000;
    for _ in 0..trials {
        let la = rng.random_range(-5.0..5.0);
        let beta = rng.random_range(0.0..1.0);
        let d_m = rng.random_range(0.0..1.0);
        let next = alpha_step(la, beta, d_m, rng.random_range(1e-4..1e-1));
        let grew = next > la;
        if grew == (d_m > beta) {
            sign_ok += 1;
        }
    }
    let (amin, amax, step, bmin) = (0.05, 5.0, 0.01, 1e-3);
    let table = [
        (amin / 2.0, 0.5 - step),
        (amin, 0.5),
        ((amin + amax) / 2.0, 0.5),
        (amax, 0.5),
        (2.0 * amax, 0.5 + step),
    ];
    let table_ok = table.iter().all(|(alpha, want)| beta_update(0.5, *alpha, amin, amax, step, bmin) == *want)
        && beta_update(0.005, amin / 2.0, amin, amax, step, bmin) == bmin;
    Outcome::new(
        sign_ok == trials && table_ok,
        format!("alpha grows iff d_m > beta on {sign_ok}/{trials} steps; beta direction table exact: {table_ok}"),
    )
}
