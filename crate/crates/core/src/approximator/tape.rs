//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in reverse insertion order (which is a topological order)
//! and accumulates adjoints. Nodes that do not depend on a gradient-requiring
//! leaf are skipped, so constants such as frozen critic weights cost nothing
//! on the way back.
//!
//! `relu` uses the subgradient 0 at exactly 0.

use super::matrix::{gemm, Matrix};
use super::params::ParamVector;
use crate::error::{PacerError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written vector-Jacobian product.
///
/// `backward` receives the forward values of the inputs, the forward output,
/// and the output adjoint; it returns one adjoint per input (`None` when the
/// input receives no gradient).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, adjoint: &Matrix) -> Vec<Option<Matrix>>;
}

enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Matrix),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    Cos(Var),
    Sum(Var),
    SumCols(Var),
    ConcatCols(Var, Var),
    SliceCols { a: Var, start: usize },
    RepeatRows { a: Var, times: usize },
    Reshape(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A recorded registration of a parameter vector, one leaf per layer.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    registered: Vec<(ParamVector, ParamVars)>,
}

/// Adjoints of every node after a backward pass.
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` if no gradient reached it.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.adjoints.get(var.0).and_then(Option::as_ref)
    }

    /// Adjoint of `var`, zero-filled to `shape` when nothing reached it.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Matrix {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    /// Collects per-layer gradients for a registered parameter vector.
    pub fn params(&self, template: &ParamVector, vars: &ParamVars) -> ParamVector {
        let mut out = template.zeros_like();
        for (i, var) in vars.vars.iter().enumerate() {
            if let Some(adj) = self.get(*var) {
                out.layer_mut(i).copy_from_slice(adj.data());
            }
        }
        out
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives gradients.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Registers one leaf per layer of `params`, shaped as a matrix
    /// (rank-1 layers become row vectors).
    pub fn register(&mut self, params: &ParamVector, trainable: bool) -> ParamVars {
        let vars: Vec<Var> = (0..params.layout().len())
            .map(|i| {
                let (r, c) = params.layer_matrix_shape(i);
                let m = Matrix::from_vec(r, c, params.layer(i).to_vec());
                self.push(m, Op::Leaf, trainable)
            })
            .collect();
        let pv = ParamVars { vars };
        if trainable {
            self.registered.push((params.clone(), pv.clone()));
        }
        pv
    }

    /// `x @ w + b` with `b` a `1 x out` row broadcast across rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(bv.cols(), wv.cols(), "bias width mismatch");
        let mut out = Matrix::zeros(xv.rows(), wv.cols());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(bv.data());
        }
        gemm(1.0, xv, false, wv, false, 1.0, &mut out);
        let rg = self.rg(&[x, w, b]);
        self.push(out, Op::Affine { x, w, b }, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Matrix::zeros(av.rows(), bv.cols());
        gemm(1.0, av, false, bv, false, 0.0, &mut out);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), f64::min);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Min(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| k * x);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// Elementwise product with a constant matrix of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Var {
        let out = self.value(a).zip_map(&c, |x, y| x * y);
        let rg = self.rg(&[a]);
        self.push(out, Op::MulConst(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(out, Op::Square(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sqrt(a), rg)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::cos);
        let rg = self.rg(&[a]);
        self.push(out, Op::Cos(a), rg)
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data: Vec<f64> = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let out = Matrix::column_vector(&data);
        let rg = self.rg(&[a]);
        self.push(out, Op::SumCols(a), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.rows(), bv.rows(), "concat_cols row mismatch");
        let cols = av.cols() + bv.cols();
        let mut out = Matrix::zeros(av.rows(), cols);
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        let rg = self.rg(&[a, b]);
        self.push(out, Op::ConcatCols(a, b), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceCols { a, start }, rg)
    }

    /// Repeats each row `times` times consecutively: row `r` lands at
    /// `r * times .. (r + 1) * times`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows() * times, av.cols());
        for r in 0..av.rows() {
            for t in 0..times {
                out.row_mut(r * times + t).copy_from_slice(av.row(r));
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::RepeatRows { a, times }, rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshaped(rows, cols);
        let rg = self.rg(&[a]);
        self.push(out, Op::Reshape(a), rg)
    }

    /// Appends a node whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: Vec<Var>, output: Matrix, op: Box<dyn CustomOp>) -> Var {
        let rg = self.rg(&inputs);
        self.push(output, Op::Custom { inputs, op }, rg)
    }

    /// Propagates `seed` (the adjoint of `output`) back through the tape.
    pub fn backward(&self, output: Var, seed: &Matrix) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(PacerError::Usage("backward called on an empty tape".into()));
        }
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(PacerError::Usage(format!(
                "adjoint shape {:?} does not match output shape {:?}",
                seed.shape(),
                out_shape
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        if self.nodes[output.0].requires_grad {
            adj[output.0] = Some(seed.clone());
        }
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    /// Backward from the most recent node, returning gradients of every
    /// parameter vector registered as trainable, concatenated in registration
    /// order.
    pub fn backward_params(&self, output_adjoint: &[f64]) -> Result<ParamVector> {
        if self.nodes.is_empty() {
            return Err(PacerError::Usage("backward called on an empty tape".into()));
        }
        let output = Var(self.nodes.len() - 1);
        let (r, c) = self.value(output).shape();
        if output_adjoint.len() != r * c {
            return Err(PacerError::Usage(format!(
                "adjoint length {} does not match output size {}",
                output_adjoint.len(),
                r * c
            )));
        }
        let grads = self.backward(output, &Matrix::from_vec(r, c, output_adjoint.to_vec()))?;
        let parts: Vec<ParamVector> = self
            .registered
            .iter()
            .map(|(p, v)| grads.params(p, v))
            .collect();
        Ok(ParamVector::concat(&parts))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, adj: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                if self.needs(*x) {
                    let wv = self.value(*w);
                    let mut dx = Matrix::zeros(g.rows(), wv.rows());
                    gemm(1.0, g, false, wv, true, 0.0, &mut dx);
                    accumulate(adj, *x, dx);
                }
                if self.needs(*w) {
                    let xv = self.value(*x);
                    let mut dw = Matrix::zeros(xv.cols(), g.cols());
                    gemm(1.0, xv, true, g, false, 0.0, &mut dw);
                    accumulate(adj, *w, dw);
                }
                if self.needs(*b) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(adj, *b, db);
                }
            }
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let mut da = Matrix::zeros(g.rows(), bv.rows());
                    gemm(1.0, g, false, bv, true, 0.0, &mut da);
                    accumulate(adj, *a, da);
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let mut db = Matrix::zeros(av.cols(), g.cols());
                    gemm(1.0, av, true, g, false, 0.0, &mut db);
                    accumulate(adj, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(adj, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(adj, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    accumulate(adj, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Min(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.needs(*a) {
                    let mut d = g.clone();
                    for ((d, x), y) in d.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                        if x > y {
                            *d = 0.0;
                        }
                    }
                    accumulate(adj, *a, d);
                }
                if self.needs(*b) {
                    let mut d = g.clone();
                    for ((d, x), y) in d.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                        if x <= y {
                            *d = 0.0;
                        }
                    }
                    accumulate(adj, *b, d);
                }
            }
            Op::Scale(a, k) => accumulate(adj, *a, g.map(|v| k * v)),
            Op::AddScalar(a) => accumulate(adj, *a, g.clone()),
            Op::MulConst(a, c) => accumulate(adj, *a, g.zip_map(c, |x, y| x * y)),
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                accumulate(adj, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                accumulate(adj, *a, d);
            }
            Op::Exp(a) => accumulate(adj, *a, g.zip_map(&node.value, |gv, y| gv * y)),
            Op::Square(a) => {
                accumulate(adj, *a, g.zip_map(self.value(*a), |gv, x| 2.0 * x * gv));
            }
            Op::Sqrt(a) => {
                let d = g.zip_map(&node.value, |gv, y| if y > 0.0 { gv / (2.0 * y) } else { 0.0 });
                accumulate(adj, *a, d);
            }
            Op::Cos(a) => {
                accumulate(adj, *a, g.zip_map(self.value(*a), |gv, x| -x.sin() * gv));
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(adj, *a, Matrix::filled(r, c, g.as_scalar()));
            }
            Op::SumCols(a) => {
                let (r, c) = self.value(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    let gi = g.get(i, 0);
                    d.row_mut(i).iter_mut().for_each(|v| *v = gi);
                }
                accumulate(adj, *a, d);
            }
            Op::ConcatCols(a, b) => {
                let ac = self.value(*a).cols();
                let bc = self.value(*b).cols();
                if self.needs(*a) {
                    let mut d = Matrix::zeros(g.rows(), ac);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                    }
                    accumulate(adj, *a, d);
                }
                if self.needs(*b) {
                    let mut d = Matrix::zeros(g.rows(), bc);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                    }
                    accumulate(adj, *b, d);
                }
            }
            Op::SliceCols { a, start } => {
                let (r, c) = self.value(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                accumulate(adj, *a, d);
            }
            Op::RepeatRows { a, times } => {
                let (r, c) = self.value(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    let row = d.row_mut(i);
                    for t in 0..*times {
                        for (x, y) in row.iter_mut().zip(g.row(i * times + t)) {
                            *x += y;
                        }
                    }
                }
                accumulate(adj, *a, d);
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(adj, *a, g.clone().reshaped(r, c));
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Matrix> = inputs.iter().map(|v| self.value(*v)).collect();
                let grads = op.backward(&vals, &node.value, g);
                assert_eq!(grads.len(), inputs.len(), "{} returned wrong arity", op.name());
                for (v, d) in inputs.iter().zip(grads) {
                    if let Some(d) = d {
                        if self.needs(*v) {
                            accumulate(adj, *v, d);
                        }
                    }
                }
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}
