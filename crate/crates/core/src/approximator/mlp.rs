use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::{LayerShape, ParamVector};
use super::tape::{ParamVars, Tape, Var};
use crate::error::{PacerError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// Shape of a fully connected network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize, output_activation: Activation) -> Self {
        MlpSpec {
            input_dim,
            hidden_dims,
            output_dim,
            hidden_activation: Activation::Relu,
            output_activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(PacerError::config("mlp needs at least one hidden layer"));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(PacerError::config(format!("mlp dimensions must be positive: {self:?}")));
        }
        if self.hidden_activation != Activation::Relu {
            return Err(PacerError::config("hidden activation must be relu"));
        }
        if self.output_activation == Activation::Relu {
            return Err(PacerError::config("output activation must be tanh or identity"));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden_dims.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }

    /// `l{i}.w` of shape `[in, out]` followed by `l{i}.b` of shape `[out]`, per layer.
    pub fn layout(&self) -> Vec<LayerShape> {
        self.layout_with_prefix("")
    }

    pub fn layout_with_prefix(&self, prefix: &str) -> Vec<LayerShape> {
        let d = self.dims();
        d.windows(2)
            .enumerate()
            .flat_map(|(i, w)| {
                [
                    LayerShape::new(format!("{prefix}l{i}.w"), vec![w[0], w[1]]),
                    LayerShape::new(format!("{prefix}l{i}.b"), vec![w[1]]),
                ]
            })
            .collect()
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamVector {
        let layout = self.layout();
        let mut values = Vec::with_capacity(layout.iter().map(LayerShape::numel).sum());
        for pair in layout.chunks(2) {
            let fan_in = pair[0].shape[0] as f64;
            let bound = 1.0 / fan_in.sqrt();
            for l in pair {
                values.extend((0..l.numel()).map(|_| rng.random_range(-bound..=bound)));
            }
        }
        ParamVector::new(values, layout).expect("init matches layout")
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(self.layout())
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout() != self.layout().as_slice() {
            return Err(PacerError::config("parameter layout does not match mlp spec"));
        }
        Ok(())
    }
}

/// Applies an MLP whose layers start at `first` in `vars` to a batch of rows.
pub fn mlp_apply(spec: &MlpSpec, tape: &mut Tape, vars: &ParamVars, first: usize, input: Var) -> Result<Var> {
    let cols = tape.value(input).cols();
    if cols != spec.input_dim {
        return Err(PacerError::config(format!(
            "mlp input has {cols} columns, expected {}",
            spec.input_dim
        )));
    }
    let n = spec.num_layers();
    let mut h = input;
    for layer in 0..n {
        let w = vars.get(first + 2 * layer);
        let b = vars.get(first + 2 * layer + 1);
        h = tape.affine(h, w, b);
        let act = if layer + 1 == n {
            spec.output_activation
        } else {
            spec.hidden_activation
        };
        h = act.apply(tape, h);
    }
    Ok(h)
}

/// Evaluates the network on a single input vector. With a tape, parameters are
/// registered as trainable leaves and every operation is recorded.
pub fn mlp_forward(spec: &MlpSpec, params: &ParamVector, input: &[f64], tape: Option<&mut Tape>) -> Result<Vec<f64>> {
    spec.validate()?;
    spec.check_params(params)?;
    if input.len() != spec.input_dim {
        return Err(PacerError::config(format!(
            "input length {} does not match input_dim {}",
            input.len(),
            spec.input_dim
        )));
    }
    let mut local = Tape::new();
    let (tape, trainable) = match tape {
        Some(t) => (t, true),
        None => (&mut local, false),
    };
    let vars = tape.register(params, trainable);
    let x = tape.constant(Matrix::row_vector(input));
    let y = mlp_apply(spec, tape, &vars, 0, x)?;
    Ok(tape.value(y).data().to_vec())
}

/// Batched forward pass without gradient bookkeeping.
pub fn mlp_eval(spec: &MlpSpec, params: &ParamVector, input: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = tape.register(params, false);
    let x = tape.constant(input.clone());
    let y = mlp_apply(spec, &mut tape, &vars, 0, x)?;
    Ok(tape.value(y).clone())
}
