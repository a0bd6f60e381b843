use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ops::{accumulate_grad, primitive_forward, Op};
use super::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<T> {
    op: Option<Op<T>>,
    inputs: Vec<usize>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Define-by-run record of primitive applications.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a single reverse sweep computes all gradients.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(None, Vec::new(), value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(None, Vec::new(), value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> Option<&Op<T>> {
        self.nodes[v.0].op.as_ref()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].inputs.iter().map(|&i| Var(i)).collect()
    }

    fn push(&mut self, op: Option<Op<T>>, inputs: Vec<usize>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on recorded inputs and records the result.
    pub fn apply(&mut self, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::contract(format!("node {} is not on this tape", bad.0)));
        }
        let values: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = primitive_forward(&op, &values)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Some(op), inputs.iter().map(|v| v.0).collect(), value, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMulTn, &[a, b])
    }
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMulNt, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        self.apply(Op::AddRow, &[m, v])
    }
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Op::Concat, parts)
    }
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        self.apply(Op::Stack, rows)
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Exp, &[a])
    }
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Softmax, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Mean, &[a])
    }
    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        self.apply(Op::Scale(k), &[a])
    }
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Op::Slice { start, len }, &[a])
    }

    /// Sum of several same-shaped nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::contract("add_all needs at least one term"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Every differentiable leaf receives a gradient of its own shape; leaves
    /// the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::contract(format!("node {} is not on this tape", loss.0)))?;
        if root.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::new(root.value.shape().to_vec(), vec![T::one()])?);

        let mut input_values: Vec<&Tensor<T>> = Vec::new();
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            input_values.clear();
            input_values.extend(node.inputs.iter().map(|&i| &self.nodes[i].value));
            for (which, &inp) in node.inputs.iter().enumerate() {
                let inode = &self.nodes[inp];
                if !inode.requires_grad {
                    continue;
                }
                let acc = grads[inp].get_or_insert_with(|| Tensor::zeros(inode.value.shape()));
                accumulate_grad(op, &input_values, &node.value, &g, which, acc);
            }
            grads[id] = Some(g);
        }
        for (id, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.op.is_none() && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Tape::backward`]: gradient of the loss per node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Moves a gradient out. Leaves recorded after the loss node yield `None`.
    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
