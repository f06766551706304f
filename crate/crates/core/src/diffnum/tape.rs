use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

static NEXT_KEY: AtomicU64 = AtomicU64::new(1);

/// A trainable leaf: value plus accumulated gradient of the same shape.
///
/// Equality compares name and value only.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    key: u64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
            key: NEXT_KEY.fetch_add(1, Ordering::Relaxed),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = Matrix::zeros(self.value.rows(), self.value.cols());
    }
}

impl PartialEq for Param {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.value == other.value
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule for a fused operation: maps the upstream adjoint to one
/// adjoint per input, in input order.
pub type CustomBackward = Box<dyn FnOnce(&Matrix) -> Vec<Matrix> + Send>;

enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Custom {
        name: &'static str,
        inputs: Vec<Var>,
        backward: Option<CustomBackward>,
    },
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom { name, inputs, .. } => write!(f, "Custom({name}, {inputs:?})"),
            Op::Leaf => f.write_str("Leaf"),
            Op::Constant => f.write_str("Constant"),
            Op::MatMul(a, b) => write!(f, "MatMul({a:?}, {b:?})"),
            Op::Add(a, b) => write!(f, "Add({a:?}, {b:?})"),
            Op::Sub(a, b) => write!(f, "Sub({a:?}, {b:?})"),
            Op::Mul(a, b) => write!(f, "Mul({a:?}, {b:?})"),
            Op::AddRow(a, b) => write!(f, "AddRow({a:?}, {b:?})"),
            Op::MulRow(a, b) => write!(f, "MulRow({a:?}, {b:?})"),
            Op::Scale(a, c) => write!(f, "Scale({a:?}, {c})"),
            Op::Offset(a) => write!(f, "Offset({a:?})"),
            Op::Tanh(a) => write!(f, "Tanh({a:?})"),
            Op::Exp(a) => write!(f, "Exp({a:?})"),
            Op::Square(a) => write!(f, "Square({a:?})"),
            Op::Sum(a) => write!(f, "Sum({a:?})"),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    param_key: Option<u64>,
}

/// Records a forward computation for one reverse sweep.
///
/// A tape is single use: `backward` may be called once, a second call
/// returns [`Error::TapeConsumed`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
    keys: Vec<Option<u64>>,
}

impl Gradients {
    /// Adjoint of `var`; zero when the node did not influence the loss.
    ///
    /// Only leaves (inputs and params) retain adjoints; intermediate nodes
    /// are released during the sweep and report zero.
    pub fn of(&self, var: Var) -> Matrix {
        match &self.adjoints[var.0] {
            Some(m) => m.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Overwrites `grad` on every param with its adjoint (zero if unbound).
    pub fn write_params(&self, params: &mut [&mut Param]) {
        for p in params.iter_mut() {
            p.zero_grad();
            for (i, k) in self.keys.iter().enumerate() {
                if *k == Some(p.key) {
                    if let Some(adj) = &self.adjoints[i] {
                        p.grad.add_assign(adj);
                    }
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param_key: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable input (adjoint retrievable via [`Gradients::of`]).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Binds a parameter as a leaf; its gradient is written back by
    /// [`Tape::backward_into`].
    pub fn param(&mut self, p: &Param) -> Var {
        let v = self.push(p.value.clone(), Op::Leaf);
        self.nodes[v.0].param_key = Some(p.key);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// `a + row`, with the `1 x cols` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self
            .value(a)
            .row_broadcast(self.value(row), "add_row", |x, r| x + r)?;
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// `a ⊙ row`, with the `1 x cols` row broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self
            .value(a)
            .row_broadcast(self.value(row), "mul_row", |x, r| x * r)?;
        Ok(self.push(value, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c))
    }

    /// Adds a fixed constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Records a fused operation with a caller-supplied backward rule.
    pub fn custom(
        &mut self,
        name: &'static str,
        inputs: Vec<Var>,
        value: Matrix,
        backward: CustomBackward,
    ) -> Var {
        self.push(
            value,
            Op::Custom {
                name,
                inputs,
                backward: Some(backward),
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NotScalar { rows: r, cols: c });
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut adj: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Constant);
            let keep = matches!(op, Op::Leaf);
            match &op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(&self.nodes[b.0].value)?;
                    let db = self.nodes[a.0].value.t_matmul(&g)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(&self.nodes[b.0].value)?;
                    let db = g.hadamard(&self.nodes[a.0].value)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut adj, *row, g.column_sums());
                    accumulate(&mut adj, *a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let rv = &self.nodes[row.0].value;
                    let da = g.row_broadcast(rv, "mul_row", |x, r| x * r)?;
                    let drow = g.hadamard(&self.nodes[a.0].value)?.column_sums();
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *row, drow);
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g.scale(*c)),
                Op::Offset(a) => accumulate(&mut adj, *a, g.clone()),
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let da = g.zip_map(y, "tanh", |gv, yv| gv * (1.0 - yv * yv))?;
                    accumulate(&mut adj, *a, da);
                }
                Op::Exp(a) => {
                    let da = g.hadamard(&self.nodes[i].value)?;
                    accumulate(&mut adj, *a, da);
                }
                Op::Square(a) => {
                    let da = g.zip_map(&self.nodes[a.0].value, "square", |gv, x| 2.0 * gv * x)?;
                    accumulate(&mut adj, *a, da);
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g.item()));
                }
                Op::Custom { .. } => {}
            }
            if let Op::Custom {
                inputs, backward, ..
            } = op
            {
                let rule = backward.expect("custom backward runs once");
                let grads = rule(&g);
                debug_assert_eq!(grads.len(), inputs.len());
                for (v, d) in inputs.into_iter().zip(grads) {
                    debug_assert_eq!(d.shape(), self.nodes[v.0].value.shape());
                    accumulate(&mut adj, v, d);
                }
            }
            if keep {
                adj[i] = Some(g);
            }
        }

        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            keys: self.nodes.iter().map(|n| n.param_key).collect(),
        })
    }

    /// Runs [`Tape::backward`] and writes every param's gradient.
    pub fn backward_into(&mut self, loss: Var, params: &mut [&mut Param]) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        grads.write_params(params);
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}
