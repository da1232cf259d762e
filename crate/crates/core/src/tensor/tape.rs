use std::cell::RefCell;

use super::ops::{forward, vjp, Op};
use super::{Result, Tensor, TensorError};

struct Node {
    op: Option<Op>,
    inputs: Vec<usize>,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a computation. Nodes are pushed in evaluation
/// order, so the record is topologically sorted by construction.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            op: None,
            inputs: vec![],
            value,
            requires_grad: true,
        })
    }

    /// A leaf that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            op: None,
            inputs: vec![],
            value,
            requires_grad: false,
        })
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    pub fn apply<'t>(&'t self, op: Op, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &nodes[v.id].value).collect();
            let value = forward(&op, &vals)?;
            (value, inputs.iter().any(|v| nodes[v.id].requires_grad))
        };
        Ok(self.push(Node {
            op: Some(op),
            inputs: inputs.iter().map(|v| v.id).collect(),
            value,
            requires_grad,
        }))
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        self.apply(Op::Concat, parts)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 || root.value.rank() > 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &nodes[i].value).collect();
            let parts = vjp(op, &inputs, &node.value, &g);
            for (&input, part) in node.inputs.iter().zip(parts) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&part).for_each(|(a, p)| *a += p),
                    slot @ None => *slot = Some(part),
                }
            }
            // keep leaf gradients, drop interior ones
            grads[id] = None;
        }
        let shapes = nodes[..=loss.id]
            .iter()
            .map(|n| (n.op.is_none() && n.requires_grad).then(|| n.value.shape().to_vec()))
            .collect::<Vec<_>>();
        let grads = grads
            .into_iter()
            .zip(shapes)
            .map(|(g, s)| match (g, s) {
                (Some(g), Some(s)) => Some(Tensor::from_parts(s, g)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of a loss with respect to the differentiable leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, recorded as a constant.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn un(self, op: Op) -> Result<Var<'t>> {
        self.tape.apply(op, &[self])
    }

    fn bin(self, op: Op, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(op, &[self, rhs])
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.bin(Op::MatMul, rhs)
    }
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.bin(Op::Add, rhs)
    }
    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.bin(Op::Sub, rhs)
    }
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.bin(Op::Mul, rhs)
    }
    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        self.un(Op::Scale(s))
    }
    pub fn sum(self) -> Result<Var<'t>> {
        self.un(Op::SumAll)
    }
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.un(Op::SumAxis(axis))
    }
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        self.un(Op::MeanAxis(axis))
    }
    pub fn t(self) -> Result<Var<'t>> {
        self.un(Op::Transpose)
    }
    pub fn select_rows(self, idx: Vec<usize>) -> Result<Var<'t>> {
        self.un(Op::SelectRows(idx))
    }
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.un(Op::Reshape(shape.to_vec()))
    }
    pub fn tanh(self) -> Result<Var<'t>> {
        self.un(Op::Tanh)
    }
    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.un(Op::Sigmoid)
    }
    pub fn relu(self) -> Result<Var<'t>> {
        self.un(Op::Relu)
    }
    pub fn leaky_relu(self) -> Result<Var<'t>> {
        self.un(Op::LeakyRelu)
    }
    pub fn exp(self) -> Result<Var<'t>> {
        self.un(Op::Exp)
    }
    pub fn ln(self) -> Result<Var<'t>> {
        self.un(Op::Log)
    }
    pub fn softmax(self) -> Result<Var<'t>> {
        self.un(Op::SoftmaxLast)
    }
    pub fn max(self) -> Result<Var<'t>> {
        self.un(Op::MaxLast)
    }
}
