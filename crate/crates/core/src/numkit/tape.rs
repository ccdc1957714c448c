//! Reverse-mode differentiation over a closed set of matrix primitives.
//!
//! A [`Tape`] is built by calling the primitive methods in evaluation order,
//! which makes node order topological by construction. Each primitive computes
//! its value eagerly; [`Tape::backward`] then walks the nodes once in reverse
//! and accumulates adjoints. Parameter leaves are tagged with a [`ParamId`] and
//! are the only nodes reported in the returned [`Gradients`].

use std::collections::BTreeMap;

use super::{Matrix, NumError};

/// Handle to a node recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifier of a trainable parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    BroadcastAdd(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Multiply(Var, Var),
    Mean(Var),
    Square(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Gradient of a scalar loss with respect to each parameter leaf.
pub type Gradients = BTreeMap<ParamId, Matrix>;

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1 × 1 node.
    pub fn scalar(&self, v: Var) -> Result<f64, NumError> {
        let m = self.value(v);
        if m.shape() != (1, 1) {
            return Err(NumError::NonScalarRoot {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        Ok(m.data()[0])
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, id: ParamId, value: Matrix) -> Var {
        self.push(Op::Param(id), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    /// `a + 1·row`, where `row` is 1 × cols(a).
    pub fn broadcast_add(&mut self, a: Var, row: Var) -> Result<Var, NumError> {
        let v = self.value(a).add_row(self.value(row))?;
        Ok(self.push(Op::BroadcastAdd(a, row), v))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    /// Elementwise product.
    pub fn multiply(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Multiply(a, b), v))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumError> {
        let m = self.value(a).mean()?;
        Ok(self.push(Op::Mean(a), Matrix::filled(1, 1, m)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    /// Accumulates d(root)/d(node) in reverse order and returns the entries
    /// for parameter leaves. Leaves registered twice under the same id have
    /// their gradients summed.
    pub fn backward(&self, root: Var) -> Result<Gradients, NumError> {
        self.scalar(root)?;
        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut grads = Gradients::new();

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Constant => {}
                Op::Param(id) => match grads.get_mut(&id) {
                    Some(acc) => acc.add_assign_scaled(&g, 1.0),
                    None => {
                        grads.insert(id, g);
                    }
                },
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(b).transpose())?;
                    let gb = self.value(a).transpose().matmul(&g)?;
                    accumulate(&mut adj, a, ga);
                    accumulate(&mut adj, b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, a, g.clone());
                    accumulate(&mut adj, b, g);
                }
                Op::BroadcastAdd(a, row) => {
                    accumulate(&mut adj, row, g.column_sums());
                    accumulate(&mut adj, a, g);
                }
                Op::Tanh(a) => {
                    let local = node.value.map(|t| 1.0 - t * t);
                    accumulate(&mut adj, a, g.mul(&local)?);
                }
                Op::Sigmoid(a) => {
                    let local = node.value.map(|s| s * (1.0 - s));
                    accumulate(&mut adj, a, g.mul(&local)?);
                }
                Op::Relu(a) => {
                    let local = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut adj, a, g.mul(&local)?);
                }
                Op::Multiply(a, b) => {
                    let ga = g.mul(self.value(b))?;
                    let gb = g.mul(self.value(a))?;
                    accumulate(&mut adj, a, ga);
                    accumulate(&mut adj, b, gb);
                }
                Op::Mean(a) => {
                    let input = self.value(a);
                    let k = g.data()[0] / input.len() as f64;
                    accumulate(&mut adj, a, Matrix::filled(input.rows(), input.cols(), k));
                }
                Op::Square(a) => {
                    let local = self.value(a).scale(2.0);
                    accumulate(&mut adj, a, g.mul(&local)?);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
