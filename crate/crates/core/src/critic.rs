//! Implicit quantile twin critics and distributional TD learning.
//!
//! A return distribution is represented as a Dirac mixture: `K` sorted
//! uniform draws plus the endpoints 0 and 1 partition the unit interval into
//! `K + 1` cells, each carrying the network's quantile value at the cell
//! midpoint with the cell width as its weight.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{NoiseMode, StochasticActor};
use crate::approximator::{CustomOp, LayerShape, Matrix, ParamVars, ParamVector, Tape, Var};
use crate::error::{PacerError, Result};
use crate::utility::UtilityFunction;

/// Width of the cosine embedding of `tau`.
pub const DEFAULT_COS_FEATURES: usize = 64;

/// A partition `0 = tau_0 < tau_1 < ... < tau_{K+1} = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantiles {
    taus: Vec<f64>,
    tau_hats: Vec<f64>,
    weights: Vec<f64>,
}

impl Quantiles {
    /// Builds from a full partition including both endpoints.
    pub fn from_partition(taus: Vec<f64>) -> Result<Self> {
        if taus.len() < 2 || taus[0] != 0.0 || *taus.last().unwrap() != 1.0 {
            return Err(PacerError::config("quantile partition must start at 0 and end at 1"));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PacerError::config("quantile partition must be strictly increasing"));
        }
        let tau_hats = taus.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let weights = taus.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Quantiles { taus, tau_hats, weights })
    }

    /// Builds from interior points; values outside `(0, 1)` and duplicates
    /// are dropped.
    pub fn from_interior(mut interior: Vec<f64>) -> Self {
        interior.retain(|t| *t > 0.0 && *t < 1.0);
        interior.sort_by(f64::total_cmp);
        interior.dedup();
        let mut taus = Vec::with_capacity(interior.len() + 2);
        taus.push(0.0);
        taus.extend(interior);
        taus.push(1.0);
        Quantiles::from_partition(taus).expect("interior points give a valid partition")
    }

    /// `K` i.i.d. uniform draws, sorted and closed off with 0 and 1.
    pub fn sample(k: usize, rng: &mut impl Rng) -> Self {
        assert!(k >= 1, "need at least one sampled quantile");
        let draws: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let q = Quantiles::from_interior(draws);
        if q.tau_hats.len() == k + 1 {
            q
        } else {
            // a draw hit 0 or collided; redraw
            Quantiles::sample(k, rng)
        }
    }

    /// `n` equal cells.
    pub fn even_grid(n: usize) -> Self {
        assert!(n >= 1);
        let mut taus: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        taus[n] = 1.0;
        Quantiles::from_partition(taus).expect("even grid is valid")
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn tau_hats(&self) -> &[f64] {
        &self.tau_hats
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_atoms(&self) -> usize {
        self.tau_hats.len()
    }
}

pub fn sample_quantiles(k: usize, rng: &mut impl Rng) -> Quantiles {
    Quantiles::sample(k, rng)
}

/// Dirac mixture over the cells of a partition.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileReturn {
    pub quantiles: Quantiles,
    pub atoms: Vec<f64>,
}

impl QuantileReturn {
    pub fn new(quantiles: Quantiles, atoms: Vec<f64>) -> Result<Self> {
        if atoms.len() != quantiles.num_atoms() {
            return Err(PacerError::config(format!(
                "{} atoms for {} quantile cells",
                atoms.len(),
                quantiles.num_atoms()
            )));
        }
        Ok(QuantileReturn { quantiles, atoms })
    }

    pub fn mean(&self) -> f64 {
        self.quantiles.weights.iter().zip(&self.atoms).map(|(w, z)| w * z).sum()
    }

    /// Same cells with atoms sorted ascending (a monotone quantile function).
    pub fn sorted(&self) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.sort_by(f64::total_cmp);
        QuantileReturn {
            quantiles: self.quantiles.clone(),
            atoms,
        }
    }

    /// Quantile function of the mixture (atoms sorted with their weights).
    pub fn quantile_fn(&self) -> impl Fn(f64) -> f64 {
        let mut pairs: Vec<(f64, f64)> = self.atoms.iter().copied().zip(self.quantiles.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        move |tau: f64| {
            let mut acc = 0.0;
            for (z, w) in &pairs {
                acc += w;
                if tau < acc {
                    return *z;
                }
            }
            pairs.last().map_or(0.0, |p| p.0)
        }
    }
}

/// Asymmetric Huber loss for quantile regression at level `tau`.
pub fn huber_quantile_loss(delta: f64, tau: f64, kappa: f64) -> f64 {
    let w = (tau - if delta < 0.0 { 1.0 } else { 0.0 }).abs();
    if delta.abs() <= kappa {
        w * delta * delta / (2.0 * kappa)
    } else {
        w * (delta.abs() - 0.5 * kappa)
    }
}

/// Derivative of [`huber_quantile_loss`] with respect to `delta`.
pub fn huber_quantile_grad(delta: f64, tau: f64, kappa: f64) -> f64 {
    let w = (tau - if delta < 0.0 { 1.0 } else { 0.0 }).abs();
    if delta.abs() <= kappa {
        w * delta / kappa
    } else {
        w * delta.signum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileHuberParams {
    pub kappa: f64,
    /// Sampled quantiles per side (`K + 1` atoms).
    pub k: usize,
}

impl Default for QuantileHuberParams {
    fn default() -> Self {
        QuantileHuberParams { kappa: 1.0, k: 32 }
    }
}

impl QuantileHuberParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || self.k == 0 {
            return Err(PacerError::config(format!("invalid quantile loss params {self:?}")));
        }
        Ok(())
    }
}

/// `(1/B) sum_b sum_i sum_j rho_{tau_bj}(target_bi - pred_bj)`; gradient flows
/// into `pred` only.
struct QuantileHuberOp {
    target: Matrix,
    taus: Matrix,
    kappa: f64,
}

impl QuantileHuberOp {
    fn forward(&self, pred: &Matrix) -> f64 {
        let b = pred.rows();
        let mut total = 0.0;
        for r in 0..b {
            for &t in self.target.row(r) {
                for (p, tau) in pred.row(r).iter().zip(self.taus.row(r)) {
                    total += huber_quantile_loss(t - p, *tau, self.kappa);
                }
            }
        }
        total / b as f64
    }
}

impl CustomOp for QuantileHuberOp {
    fn name(&self) -> &'static str {
        "quantile_huber"
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, adjoint: &Matrix) -> Vec<Option<Matrix>> {
        let pred = inputs[0];
        let scale = adjoint.as_scalar() / pred.rows() as f64;
        let mut d = Matrix::zeros(pred.rows(), pred.cols());
        for r in 0..pred.rows() {
            let trow = self.target.row(r);
            let prow = pred.row(r);
            let taurow = self.taus.row(r);
            let drow = d.row_mut(r);
            for j in 0..prow.len() {
                let g: f64 = trow.iter().map(|t| huber_quantile_grad(t - prow[j], taurow[j], self.kappa)).sum();
                drow[j] = -scale * g;
            }
        }
        vec![Some(d)]
    }
}

/// Records the batched quantile Huber loss of `pred` (`B x N_j`, quantile
/// levels `taus`) against constant `target` atoms (`B x N_i`).
pub fn quantile_huber_loss(tape: &mut Tape, pred: Var, target: Matrix, taus: Matrix, kappa: f64) -> Var {
    let op = QuantileHuberOp { target, taus, kappa };
    let value = op.forward(tape.value(pred));
    tape.custom(vec![pred], Matrix::scalar(value), Box::new(op))
}

/// `cos(pi * j * tau)` for `j = 0..width`, one row per entry of a column
/// vector, evaluated with the Chebyshev recurrence.
struct CosEmbedding;

fn chebyshev_row(tau: f64, width: usize, out: &mut [f64], sin: Option<&mut [f64]>) {
    let c1 = (PI * tau).cos();
    let s1 = (PI * tau).sin();
    for j in 0..width {
        out[j] = match j {
            0 => 1.0,
            1 => c1,
            _ => 2.0 * c1 * out[j - 1] - out[j - 2],
        };
    }
    if let Some(sin) = sin {
        for j in 0..width {
            sin[j] = match j {
                0 => 0.0,
                1 => s1,
                _ => 2.0 * c1 * sin[j - 1] - sin[j - 2],
            };
        }
    }
}

impl CustomOp for CosEmbedding {
    fn name(&self) -> &'static str {
        "cos_embedding"
    }

    fn backward(&self, inputs: &[&Matrix], output: &Matrix, adjoint: &Matrix) -> Vec<Option<Matrix>> {
        let taus = inputs[0];
        let width = output.cols();
        let mut cos = vec![0.0; width];
        let mut sin = vec![0.0; width];
        let mut d = Matrix::zeros(taus.rows(), 1);
        for r in 0..taus.rows() {
            chebyshev_row(taus.get(r, 0), width, &mut cos, Some(&mut sin));
            let g: f64 = adjoint.row(r).iter().enumerate().map(|(j, a)| -a * PI * j as f64 * sin[j]).sum();
            d.set(r, 0, g);
        }
        vec![Some(d)]
    }
}

/// Records the cosine features of a column of quantile levels.
pub fn cos_embedding(tape: &mut Tape, taus: Var, width: usize) -> Var {
    let t = tape.value(taus);
    let mut out = Matrix::zeros(t.rows(), width);
    for r in 0..t.rows() {
        let tau = t.get(r, 0);
        chebyshev_row(tau, width, out.row_mut(r), None);
    }
    tape.custom(vec![taus], out, Box::new(CosEmbedding))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqnSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    /// First entry is the width shared by the trunk and the tau embedding.
    pub hidden_dims: Vec<usize>,
    pub cos_features: usize,
}

impl IqnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) || self.cos_features == 0 {
            return Err(PacerError::config(format!("invalid critic shape {self:?}")));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerShape> {
        let h0 = self.hidden_dims[0];
        let mut l = vec![
            LayerShape::new("sa.w", vec![self.state_dim + self.action_dim, h0]),
            LayerShape::new("sa.b", vec![h0]),
            LayerShape::new("tau.w", vec![self.cos_features, h0]),
            LayerShape::new("tau.b", vec![h0]),
        ];
        for (i, w) in self.hidden_dims.windows(2).enumerate() {
            l.push(LayerShape::new(format!("h{}.w", i + 1), vec![w[0], w[1]]));
            l.push(LayerShape::new(format!("h{}.b", i + 1), vec![w[1]]));
        }
        let last = *self.hidden_dims.last().unwrap();
        l.push(LayerShape::new("head.w", vec![last, 1]));
        l.push(LayerShape::new("head.b", vec![1]));
        l
    }
}

/// `z(s, a, tau)`: relu trunk on `s ++ a`, multiplied elementwise by a relu
/// projection of `cos(pi * j * tau)` for `j = 0..cos_features`, then further
/// relu layers and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct IqnNet {
    pub spec: IqnSpec,
    pub params: ParamVector,
}

impl IqnNet {
    pub fn new(spec: IqnSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut values = Vec::new();
        for pair in layout.chunks(2) {
            let bound = 1.0 / (pair[0].shape[0] as f64).sqrt();
            for l in pair {
                values.extend((0..l.numel()).map(|_| rng.random_range(-bound..=bound)));
            }
        }
        let params = ParamVector::new(values, layout)?;
        Ok(IqnNet { spec, params })
    }

    pub fn from_params(spec: IqnSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if params.layout() != spec.layout().as_slice() {
            return Err(PacerError::config("critic parameters do not match critic shape"));
        }
        Ok(IqnNet { spec, params })
    }

    pub fn zero_head(&mut self) {
        let n = self.params.layout().len();
        self.params.layer_mut(n - 2).iter_mut().for_each(|v| *v = 0.0);
        self.params.layer_mut(n - 1).iter_mut().for_each(|v| *v = 0.0);
    }

    /// Batched quantile values: `sa` is `B x (state_dim + action_dim)`,
    /// `tau_hats` is `B x N`; returns `B x N`.
    pub fn apply(&self, tape: &mut Tape, vars: &ParamVars, sa: Var, tau_hats: Var) -> Result<Var> {
        let (b, cols) = tape.value(sa).shape();
        if cols != self.spec.state_dim + self.spec.action_dim {
            return Err(PacerError::config(format!(
                "critic input has {cols} columns, expected {}",
                self.spec.state_dim + self.spec.action_dim
            )));
        }
        let (tb, n) = tape.value(tau_hats).shape();
        if tb != b {
            return Err(PacerError::config("tau rows must match batch rows"));
        }
        let trunk = tape.affine(sa, vars.get(0), vars.get(1));
        let trunk = tape.relu(trunk);
        let trunk = tape.repeat_rows(trunk, n);

        let tau_col = tape.reshape(tau_hats, b * n, 1);
        let feats = cos_embedding(tape, tau_col, self.spec.cos_features);
        let emb = tape.affine(feats, vars.get(2), vars.get(3));
        let emb = tape.relu(emb);

        let mut h = tape.mul(trunk, emb);
        let extra = self.spec.hidden_dims.len() - 1;
        for i in 0..extra {
            h = tape.affine(h, vars.get(4 + 2 * i), vars.get(5 + 2 * i));
            h = tape.relu(h);
        }
        let head = 4 + 2 * extra;
        let out = tape.affine(h, vars.get(head), vars.get(head + 1));
        Ok(tape.reshape(out, b, n))
    }

    /// Quantile values at one `(s, a)` pair.
    pub fn quantile_values(&self, state: &[f64], action: &[f64], tau_hats: &[f64]) -> Result<Vec<f64>> {
        let mut sa = state.to_vec();
        sa.extend_from_slice(action);
        let mut tape = Tape::new();
        let vars = tape.register(&self.params, false);
        let sa = tape.constant(Matrix::row_vector(&sa));
        let taus = tape.constant(Matrix::row_vector(tau_hats));
        let z = self.apply(&mut tape, &vars, sa, taus)?;
        Ok(tape.value(z).data().to_vec())
    }

    pub fn quantile_return(&self, state: &[f64], action: &[f64], quantiles: Quantiles) -> Result<QuantileReturn> {
        let atoms = self.quantile_values(state, action, quantiles.tau_hats())?;
        QuantileReturn::new(quantiles, atoms)
    }

    /// Batched evaluation without gradients.
    pub fn eval(&self, sa: &Matrix, tau_hats: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = tape.register(&self.params, false);
        let sa = tape.constant(sa.clone());
        let taus = tape.constant(tau_hats.clone());
        let z = self.apply(&mut tape, &vars, sa, taus)?;
        Ok(tape.value(z).clone())
    }
}

/// Online and target twins.
#[derive(Clone, Debug)]
pub struct TwinCritics {
    pub online: [IqnNet; 2],
    pub target: [IqnNet; 2],
    pub polyak: f64,
}

impl TwinCritics {
    /// Independent online initializations; targets start as exact copies.
    pub fn new(spec: IqnSpec, polyak: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(polyak > 0.0 && polyak <= 1.0) {
            return Err(PacerError::config(format!("polyak rate must lie in (0, 1], got {polyak}")));
        }
        let a = IqnNet::new(spec.clone(), rng)?;
        let b = IqnNet::new(spec, rng)?;
        Ok(TwinCritics {
            target: [a.clone(), b.clone()],
            online: [a, b],
            polyak,
        })
    }

    pub fn spec(&self) -> &IqnSpec {
        &self.online[0].spec
    }

    /// `target <- (1 - rate) * target + rate * online` for both twins.
    pub fn polyak_update(&mut self, rate: f64) {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            t.params.blend_from(&o.params, rate);
        }
    }

    pub fn swap_online(&mut self) {
        self.online.swap(0, 1);
    }
}

/// A replay batch in network coordinates: normalized states and actions in
/// `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Sampled quantile levels for every batch row, as `B x (K + 1)` midpoints.
pub fn sample_tau_matrix(rows: usize, k: usize, rng: &mut impl Rng) -> Matrix {
    let hats: Vec<Vec<f64>> = (0..rows).map(|_| Quantiles::sample(k, rng).tau_hats().to_vec()).collect();
    Matrix::from_rows(&hats)
}

fn concat(a: &Matrix, b: &Matrix) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..a.rows())
        .map(|r| a.row(r).iter().chain(b.row(r)).copied().collect())
        .collect();
    Matrix::from_rows(&rows)
}

/// `psi_r(r) + gamma * min(z_target1, z_target2)(s', a', tau_hat_i)` with
/// `a' = pi(s', xi)` for fresh training noise. No gradient.
pub fn td_targets(
    critics: &TwinCritics,
    actor: &dyn StochasticActor,
    batch: &Batch,
    target_taus: &Matrix,
    gamma: f64,
    utility: &UtilityFunction,
    rng: &mut dyn rand::RngCore,
) -> Result<Matrix> {
    let b = batch.len();
    let noise: Vec<Vec<f64>> = (0..b).map(|_| actor.sample_noise(NoiseMode::Train, rng)).collect();
    let next_actions = {
        let mut tape = Tape::new();
        let vars = tape.register(actor.params(), false);
        let s = tape.constant(batch.next_states.clone());
        let z = tape.constant(Matrix::from_rows(&noise));
        let a = actor.normalized_actions(&mut tape, &vars, s, z)?;
        tape.value(a).clone()
    };
    let sa = concat(&batch.next_states, &next_actions);
    let z1 = critics.target[0].eval(&sa, target_taus)?;
    let z2 = critics.target[1].eval(&sa, target_taus)?;
    let mut out = z1.zip_map(&z2, f64::min);
    for r in 0..b {
        let base = utility.reshape_reward(batch.rewards[r]);
        out.row_mut(r).iter_mut().for_each(|z| *z = base + gamma * *z);
    }
    Ok(out)
}

/// Pairwise TD errors for batch row `row`: `delta[i][j] = target_i - z_online(s, a, tau_hat_j)`
/// using the first online twin.
pub fn td_deltas(critics: &TwinCritics, batch: &Batch, row: usize, targets: &Matrix, online_taus: &[f64]) -> Result<Vec<Vec<f64>>> {
    let z = critics.online[0].quantile_values(batch.states.row(row), batch.actions.row(row), online_taus)?;
    Ok(targets
        .row(row)
        .iter()
        .map(|t| z.iter().map(|zj| t - zj).collect())
        .collect())
}

/// Records the twin critic loss. Targets are constants, so neither the
/// target nets nor the actor receive gradient. Returns the loss node and the
/// registered online parameter handles.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    tape: &mut Tape,
    critics: &TwinCritics,
    actor: &dyn StochasticActor,
    batch: &Batch,
    params: &QuantileHuberParams,
    gamma: f64,
    utility: &UtilityFunction,
    rng: &mut dyn rand::RngCore,
) -> Result<(Var, [ParamVars; 2])> {
    if batch.is_empty() {
        return Err(PacerError::Usage("critic loss needs a nonempty batch".into()));
    }
    let mut rng = rng;
    let target_taus = sample_tau_matrix(batch.len(), params.k, &mut rng);
    let online_taus = sample_tau_matrix(batch.len(), params.k, &mut rng);
    let targets = td_targets(critics, actor, batch, &target_taus, gamma, utility, rng)?;
    critic_loss_with(tape, critics, batch, params.kappa, &targets, &online_taus)
}

/// Critic loss for given targets and online quantile levels.
pub fn critic_loss_with(
    tape: &mut Tape,
    critics: &TwinCritics,
    batch: &Batch,
    kappa: f64,
    targets: &Matrix,
    online_taus: &Matrix,
) -> Result<(Var, [ParamVars; 2])> {
    let sa = tape.constant(concat(&batch.states, &batch.actions));
    let taus = tape.constant(online_taus.clone());
    let v0 = tape.register(&critics.online[0].params, true);
    let v1 = tape.register(&critics.online[1].params, true);
    let z0 = critics.online[0].apply(tape, &v0, sa, taus)?;
    let z1 = critics.online[1].apply(tape, &v1, sa, taus)?;
    let l0 = quantile_huber_loss(tape, z0, targets.clone(), online_taus.clone(), kappa);
    let l1 = quantile_huber_loss(tape, z1, targets.clone(), online_taus.clone(), kappa);
    let loss = tape.add(l0, l1);
    let value = tape.value(loss).as_scalar();
    if !value.is_finite() {
        return Err(PacerError::training("critic_loss", format!("loss is {value}")));
    }
    Ok((loss, [v0, v1]))
}
