use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::ops::{self, Activation, OpKind};
use super::{Tensor, TensorError};

pub type NodeId = usize;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

struct Node {
    op: OpKind,
    inputs: Vec<NodeId>,
    value: Arc<Tensor>,
    requires_grad: bool,
}

/// Append-only record of operations for reverse-mode differentiation.
///
/// Recording goes through `&self` so dynamics closures can share the tape;
/// a tape is single-writer and is deliberately `!Sync`.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    /// `None` on an inference tape: intermediate values are not kept.
    placeholder: Option<Arc<Tensor>>,
}

/// Handle to a recorded node together with its forward value.
#[derive(Clone)]
pub struct Var {
    tape: u64,
    id: NodeId,
    value: Arc<Tensor>,
}

impl Var {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.value.item()
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value)
    }
}

/// Cotangents produced by [`Tape::backward`], keyed by node id.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.grads.get(&var.id)
    }

    /// Gradient with respect to `var`, zeros when the output does not depend on it.
    pub fn wrt(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn by_node(&self) -> &BTreeMap<NodeId, Tensor> {
        &self.grads
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            placeholder: None,
        }
    }

    /// Tape for forward-only evaluation.
    ///
    /// Intermediate values live only as long as their `Var` handles, every
    /// leaf is a constant and `backward` is an error.
    pub fn inference() -> Self {
        Tape {
            placeholder: Some(Arc::new(Tensor::zeros(&[0]))),
            ..Tape::new()
        }
    }

    pub fn is_inference(&self) -> bool {
        self.placeholder.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Id of the most recently recorded node.
    pub fn tip(&self) -> Option<NodeId> {
        self.len().checked_sub(1)
    }

    fn push(&self, op: OpKind, inputs: Vec<NodeId>, value: Tensor, requires_grad: bool) -> Var {
        let value = Arc::new(value);
        let stored = match &self.placeholder {
            Some(empty) if op != OpKind::Leaf => Arc::clone(empty),
            _ => Arc::clone(&value),
        };
        let requires_grad = requires_grad && !self.is_inference();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            inputs,
            value: stored,
            requires_grad,
        });
        Var {
            tape: self.id,
            id,
            value,
        }
    }

    /// Differentiable leaf (parameter or input).
    pub fn var(&self, value: Tensor) -> Var {
        self.push(OpKind::Leaf, Vec::new(), value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(OpKind::Leaf, Vec::new(), value, false)
    }

    fn check(&self, var: &Var) -> Result<(), TensorError> {
        if var.tape != self.id || var.id >= self.len() {
            return Err(TensorError::ForeignVar { id: var.id });
        }
        Ok(())
    }

    /// Evaluates `op` on `inputs` and appends the result.
    pub fn record(&self, op: OpKind, inputs: &[&Var]) -> Result<Var, TensorError> {
        if op == OpKind::Leaf {
            return Err(TensorError::Arity { op: "leaf", expected: 0, actual: inputs.len() });
        }
        for v in inputs {
            self.check(v)?;
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| v.value()).collect();
        let out = ops::forward(&op, &values)?;
        if !out.all_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        Ok(self.push(op, inputs.iter().map(|v| v.id).collect(), out, requires_grad))
    }

    /// Reverse sweep from `output` seeded with `seed`.
    ///
    /// Cotangents are accumulated in decreasing node-id order, which fixes the
    /// floating-point summation order. Only differentiable leaves are returned.
    pub fn backward(&self, output: &Var, seed: Tensor) -> Result<Gradients, TensorError> {
        self.check(output)?;
        if self.is_inference() {
            return Err(TensorError::InvalidArgument("backward on an inference tape".into()));
        }
        if seed.shape() != output.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "backward",
                shapes: vec![output.shape().to_vec(), seed.shape().to_vec()],
            });
        }
        let nodes = self.nodes.borrow();
        let mut cot: Vec<Option<Tensor>> = vec![None; output.id + 1];
        cot[output.id] = Some(seed);
        let mut grads = BTreeMap::new();
        for id in (0..=output.id).rev() {
            let Some(g) = cot[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if node.op == OpKind::Leaf {
                grads.insert(id, g);
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &*nodes[i].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let local = ops::backward(&node.op, &inputs, &node.value, &g, &needs);
            for (&input, grad) in node.inputs.iter().zip(local) {
                let Some(grad) = grad else { continue };
                match &mut cot[input] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Shorthand for `backward(output, ones)`.
    pub fn grad(&self, output: &Var) -> Result<Gradients, TensorError> {
        self.backward(output, Tensor::ones(output.shape()))
    }

    /// Re-evaluates every recorded node from the stored leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor>, TensorError> {
        let nodes = self.nodes.borrow();
        let mut values: Vec<Tensor> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            let v = if node.op == OpKind::Leaf {
                (*node.value).clone()
            } else {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &values[i]).collect();
                ops::forward(&node.op, &inputs)?
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Whether a fresh replay reproduces every stored value bit for bit.
    pub fn replay_matches(&self) -> Result<bool, TensorError> {
        let replayed = self.replay()?;
        let nodes = self.nodes.borrow();
        Ok(replayed.iter().zip(nodes.iter()).all(|(r, n)| {
            r.shape() == n.value.shape()
                && r.data()
                    .iter()
                    .zip(n.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        }))
    }

    /// Every node's inputs precede it.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .all(|(id, n)| n.inputs.iter().all(|&i| i < id))
    }

    // Convenience wrappers around `record`.

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Add, &[a, b])
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Sub, &[a, b])
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Mul, &[a, b])
    }

    pub fn div(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Div, &[a, b])
    }

    pub fn scale(&self, a: &Var, c: f64) -> Result<Var, TensorError> {
        self.record(OpKind::Scale(c), &[a])
    }

    pub fn offset(&self, a: &Var, c: f64) -> Result<Var, TensorError> {
        self.record(OpKind::Offset(c), &[a])
    }

    pub fn add_row(&self, x: &Var, bias: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::AddRow, &[x, bias])
    }

    pub fn matmul(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::MatMul, &[a, b])
    }

    /// `x W^T + b`.
    pub fn affine(&self, x: &Var, w: &Var, b: &Var) -> Result<Var, TensorError> {
        self.dense(x, w, b, Activation::Identity, None)
    }

    pub fn dense(
        &self,
        x: &Var,
        w: &Var,
        b: &Var,
        activation: Activation,
        time: Option<f64>,
    ) -> Result<Var, TensorError> {
        self.record(OpKind::Dense { activation, time }, &[x, w, b])
    }

    pub fn tanh(&self, a: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Tanh, &[a])
    }

    pub fn sigmoid(&self, a: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Sigmoid, &[a])
    }

    pub fn pow(&self, a: &Var, p: f64) -> Result<Var, TensorError> {
        self.record(OpKind::Pow(p), &[a])
    }

    pub fn abs(&self, a: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Abs, &[a])
    }

    pub fn maximum(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Maximum, &[a, b])
    }

    pub fn sum(&self, a: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Sum, &[a])
    }

    pub fn mean(&self, a: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Mean, &[a])
    }

    pub fn mean_axis0(&self, a: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::MeanAxis0, &[a])
    }

    pub fn var_axis0(&self, a: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::VarAxis0, &[a])
    }

    pub fn norm2(&self, a: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Norm2, &[a])
    }

    pub fn distance(&self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.record(OpKind::Distance, &[a, b])
    }

    pub fn weighted_rms(
        &self,
        err: &Var,
        z: &Var,
        z_next: &Var,
        atol: f64,
        rtol: f64,
    ) -> Result<Var, TensorError> {
        self.record(OpKind::WeightedRms { atol, rtol }, &[err, z, z_next])
    }

    pub fn lincomb(&self, coefs: &[f64], xs: &[&Var]) -> Result<Var, TensorError> {
        self.record(OpKind::LinComb(coefs.to_vec()), xs)
    }

    pub fn concat(&self, xs: &[&Var], axis: usize) -> Result<Var, TensorError> {
        self.record(OpKind::Concat { axis }, xs)
    }

    pub fn slice(&self, a: &Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        self.record(OpKind::Slice { axis, start, end }, &[a])
    }

    pub fn reshape(&self, a: &Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.record(OpKind::Reshape(shape.to_vec()), &[a])
    }

    pub fn softmax_cross_entropy(&self, logits: &Var, labels: &[usize]) -> Result<Var, TensorError> {
        self.record(
            OpKind::SoftmaxCrossEntropy {
                labels: labels.to_vec(),
            },
            &[logits],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_addition() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(1.0));
        let y = tape.var(Tensor::scalar(2.0));
        assert_eq!(tape.add(&x, &y).unwrap().item(), 3.0);
    }

    #[test]
    fn inference_tape_matches_and_refuses_backward() {
        let run = |tape: &Tape| {
            let x = tape.var(Tensor::vector(vec![0.2, -0.4]));
            let y = tape.tanh(&tape.mul(&x, &x).unwrap()).unwrap();
            (tape.sum(&y).unwrap(), tape.grad(&y).is_ok())
        };
        let (a, a_grad) = run(&Tape::new());
        let (b, b_grad) = run(&Tape::inference());
        assert_eq!(a.item().to_bits(), b.item().to_bits());
        assert!(a_grad && !b_grad);
    }

    #[test]
    fn identity_matmul_returns_vector() {
        let tape = Tape::new();
        let eye = tape.constant(Tensor::identity(2));
        let v = tape.var(Tensor::matrix(2, 1, vec![0.3, -1.7]).unwrap());
        let out = tape.matmul(&eye, &v).unwrap();
        assert_eq!(out.value().data(), v.value().data());
    }

    #[test]
    fn tanh_value() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.5));
        // tanh(0.5) from a 30-digit reference
        let expected = 0.462_117_157_260_009_758_502_318_483_643_6;
        assert!((tape.tanh(&x).unwrap().item() - expected).abs() < 1e-11);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.pow(&x, 2.0).unwrap();
        assert_eq!(tape.grad(&y).unwrap().wrt(&x).item(), 6.0);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.scale(&c, 2.0).unwrap();
        let g = tape.grad(&y).unwrap();
        assert!(g.get(&x).is_none());
        assert_eq!(g.wrt(&x).item(), 0.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(2.0));
        let y = tape.mul(&x, &x).unwrap();
        let z = tape.add(&y, &x).unwrap();
        assert_eq!(tape.grad(&z).unwrap().wrt(&x).item(), 5.0);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2]));
        let b = tape.var(Tensor::zeros(&[3]));
        let err = tape.add(&a, &b).unwrap_err();
        assert!(err.to_string().contains("add"));
        assert!(err.to_string().contains("[2]"));
    }

    #[test]
    fn foreign_var_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let x = t1.var(Tensor::scalar(1.0));
        assert!(matches!(t2.backward(&x, Tensor::scalar(1.0)), Err(TensorError::ForeignVar { .. })));
    }

    #[test]
    fn seed_shape_checked() {
        let tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[2]));
        assert!(tape.backward(&x, Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn non_finite_output_raises() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.0));
        let err = tape.pow(&x, -1.0).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "pow" }));
        assert_eq!(tape.len(), 1);
    }

    #[test]
    fn label_out_of_range() {
        let tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[1, 10]));
        assert!(matches!(
            tape.softmax_cross_entropy(&x, &[10]),
            Err(TensorError::LabelOutOfRange { label: 10, classes: 10 })
        ));
    }
}
