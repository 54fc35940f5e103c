//! Sample-based MMD between the policy's action distribution and a uniform
//! reference over the (normalized) action box.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{NoiseMode, StochasticActor};
use crate::approximator::{CustomOp, Matrix, ParamVars, Tape, Var};
use crate::error::{PacerError, Result};

pub const DEFAULT_MMD_SAMPLES: usize = 100;

/// Gaussian kernel `exp(-|x - y|^2 / (2 h^2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdKernel {
    pub bandwidth_sq: f64,
}

impl MmdKernel {
    pub fn gaussian(bandwidth_sq: f64) -> Result<Self> {
        if !(bandwidth_sq > 0.0 && bandwidth_sq.is_finite()) {
            return Err(PacerError::config(format!("kernel bandwidth must be positive, got {bandwidth_sq}")));
        }
        Ok(MmdKernel { bandwidth_sq })
    }

    /// Default for a `[-1, 1]^d` box: `h^2 = d`.
    pub fn for_action_dim(d: usize) -> Self {
        MmdKernel { bandwidth_sq: d as f64 }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (-sq_dist(x, y) / (2.0 * self.bandwidth_sq)).exp()
    }

    pub fn gram(&self, xs: &[Vec<f64>]) -> Matrix {
        let n = xs.len();
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g.set(i, j, self.eval(&xs[i], &xs[j]));
            }
        }
        g
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Sample value of the estimator together with its inputs.
#[derive(Clone, Debug)]
pub struct MmdEstimate {
    pub value: f64,
    pub policy_samples: Vec<Vec<f64>>,
    pub reference_samples: Vec<Vec<f64>>,
}

/// Inner V-statistic before the square root.
fn mmd_sq_rows(k: &MmdKernel, xs: &[&[f64]], ys: &[&[f64]]) -> f64 {
    let block = |a: &[&[f64]], b: &[&[f64]]| -> f64 {
        let mut s = 0.0;
        for x in a {
            for y in b {
                s += k.eval(x, y);
            }
        }
        s / (a.len() * b.len()) as f64
    };
    block(xs, xs) + block(ys, ys) - 2.0 * block(xs, ys)
}

/// Biased MMD estimate, clamped at 0 before the square root.
pub fn mmd(kernel: &MmdKernel, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(PacerError::Usage("mmd needs nonempty sample sets".into()));
    }
    let xs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let ys: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
    Ok(mmd_sq_rows(kernel, &xs, &ys).max(0.0).sqrt())
}

/// Per-group MMD between rows of the input (`G*n x d`) and constant reference
/// rows (`G*m x d`); output is `G x 1`. Gradient flows into the input only.
struct GroupedMmd {
    kernel: MmdKernel,
    reference: Matrix,
    groups: usize,
}

impl GroupedMmd {
    fn rows(m: &Matrix, g: usize, per: usize) -> Vec<&[f64]> {
        (g * per..(g + 1) * per).map(|r| m.row(r)).collect()
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let n = x.rows() / self.groups;
        let m = self.reference.rows() / self.groups;
        let vals: Vec<f64> = (0..self.groups)
            .map(|g| {
                let xs = Self::rows(x, g, n);
                let ys = Self::rows(&self.reference, g, m);
                mmd_sq_rows(&self.kernel, &xs, &ys).max(0.0).sqrt()
            })
            .collect();
        Matrix::column_vector(&vals)
    }
}

impl CustomOp for GroupedMmd {
    fn name(&self) -> &'static str {
        "grouped_mmd"
    }

    fn backward(&self, inputs: &[&Matrix], output: &Matrix, adjoint: &Matrix) -> Vec<Option<Matrix>> {
        let x = inputs[0];
        let d = x.cols();
        let n = x.rows() / self.groups;
        let m = self.reference.rows() / self.groups;
        let h2 = self.kernel.bandwidth_sq;
        let mut grad = Matrix::zeros(x.rows(), d);
        for g in 0..self.groups {
            let value = output.get(g, 0);
            if value <= 0.0 {
                continue;
            }
            // d sqrt(v) = dv / (2 sqrt(v))
            let outer = adjoint.get(g, 0) / (2.0 * value);
            let xs = Self::rows(x, g, n);
            let ys = Self::rows(&self.reference, g, m);
            for i in 0..n {
                let xi = xs[i];
                let mut acc = vec![0.0; d];
                for xj in &xs {
                    let kv = self.kernel.eval(xi, xj);
                    let c = 2.0 / (n * n) as f64 * kv / h2;
                    for (a, (p, q)) in acc.iter_mut().zip(xi.iter().zip(xj.iter())) {
                        *a -= c * (p - q);
                    }
                }
                for yj in &ys {
                    let kv = self.kernel.eval(xi, yj);
                    let c = 2.0 / (n * m) as f64 * kv / h2;
                    for (a, (p, q)) in acc.iter_mut().zip(xi.iter().zip(yj.iter())) {
                        *a += c * (p - q);
                    }
                }
                let row = grad.row_mut(g * n + i);
                for (r, a) in row.iter_mut().zip(&acc) {
                    *r = outer * a;
                }
            }
        }
        vec![Some(grad)]
    }
}

/// Records per-group MMD of `samples` against fixed `reference` rows.
pub fn grouped_mmd(tape: &mut Tape, kernel: &MmdKernel, samples: Var, reference: Matrix, groups: usize) -> Result<Var> {
    let x = tape.value(samples);
    if groups == 0 || x.rows() % groups != 0 || reference.rows() % groups != 0 || reference.cols() != x.cols() {
        return Err(PacerError::Usage("grouped mmd shapes do not divide into groups".into()));
    }
    let op = GroupedMmd {
        kernel: *kernel,
        reference,
        groups,
    };
    let out = op.forward(x);
    Ok(tape.custom(vec![samples], out, Box::new(op)))
}

/// `rows x dim` uniform draws on `[-1, 1]`.
pub fn uniform_reference(rows: usize, dim: usize, rng: &mut (impl Rng + ?Sized)) -> Matrix {
    Matrix::from_vec(rows, dim, (0..rows * dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
}

struct Recorded {
    value: Var,
    actions: Var,
    reference: Matrix,
}

fn record(
    tape: &mut Tape,
    actor: &dyn StochasticActor,
    vars: &ParamVars,
    states: &Matrix,
    kernel: &MmdKernel,
    n_samples: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<Recorded> {
    let b = states.rows();
    if b == 0 {
        return Err(PacerError::Usage("regularizer needs a nonempty batch".into()));
    }
    if n_samples < 2 {
        return Err(PacerError::config(format!("mmd needs at least 2 samples, got {n_samples}")));
    }
    let noise_rows: Vec<Vec<f64>> = (0..b * n_samples).map(|_| actor.sample_noise(NoiseMode::Train, rng)).collect();
    let reference = uniform_reference(b * n_samples, actor.action_dim(), rng);
    let s = tape.constant(states.clone());
    let s = tape.repeat_rows(s, n_samples);
    let xi = tape.constant(Matrix::from_rows(&noise_rows));
    let actions = actor.normalized_actions(tape, vars, s, xi)?;
    let per_state = grouped_mmd(tape, kernel, actions, reference.clone(), b)?;
    Ok(Recorded {
        value: tape.mean(per_state),
        actions,
        reference,
    })
}

/// Mean over `states` rows of the MMD between `n_samples` policy actions and
/// `n_samples` fresh uniform reference actions, in normalized action space.
/// Returns a `1 x 1` node differentiable in the actor parameters.
pub fn batch_regularizer(
    tape: &mut Tape,
    actor: &dyn StochasticActor,
    vars: &ParamVars,
    states: &Matrix,
    kernel: &MmdKernel,
    n_samples: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<Var> {
    Ok(record(tape, actor, vars, states, kernel, n_samples, rng)?.value)
}

/// MMD of the policy at one state against uniform, with the samples used.
pub fn policy_mmd(
    actor: &dyn StochasticActor,
    state: &[f64],
    kernel: &MmdKernel,
    n_samples: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<MmdEstimate> {
    let mut tape = Tape::new();
    let vars = tape.register(actor.params(), false);
    let r = record(&mut tape, actor, &vars, &Matrix::row_vector(state), kernel, n_samples, rng)?;
    let rows = |m: &Matrix| (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
    Ok(MmdEstimate {
        value: tape.value(r.value).as_scalar(),
        policy_samples: rows(tape.value(r.actions)),
        reference_samples: rows(&r.reference),
    })
}

/// Expected MMD between two independent uniform sample sets of size `n`,
/// averaged over `trials`.
pub fn uniform_self_mmd(kernel: &MmdKernel, dim: usize, n: usize, trials: usize, rng: &mut impl Rng) -> f64 {
    let mut total = 0.0;
    for _ in 0..trials {
        let xs = uniform_reference(n, dim, rng);
        let ys = uniform_reference(n, dim, rng);
        let xr: Vec<&[f64]> = (0..n).map(|r| xs.row(r)).collect();
        let yr: Vec<&[f64]> = (0..n).map(|r| ys.row(r)).collect();
        total += mmd_sq_rows(kernel, &xr, &yr).max(0.0).sqrt();
    }
    total / trials as f64
}
