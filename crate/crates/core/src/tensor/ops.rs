//! Forward and reverse (vector-Jacobian) rules for every recordable operation.

use super::{Tensor, TensorError};

/// Pointwise nonlinearity fused into [`OpKind::Dense`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Operation recorded on a [`Tape`](super::Tape) node.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// Input or parameter; has no inputs.
    Leaf,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// Elementwise quotient.
    Div,
    /// Multiplication by a constant.
    Scale(f64),
    /// Addition of a constant.
    Offset(f64),
    /// `(.., n) + (n)`, bias broadcast over leading axes.
    AddRow,
    /// `(m, k) x (k, n)`.
    MatMul,
    /// `act(x W^T + b)` for `x: (B, n)`, `W: (m, n)`, `b: (m)`. With `time: Some(t)`
    /// the weight has an extra trailing column multiplying the constant feature `t`,
    /// i.e. `act(W [x; t] + b)` without materialising the concatenation.
    Dense {
        activation: Activation,
        time: Option<f64>,
    },
    Tanh,
    Sigmoid,
    /// Elementwise power with a constant exponent.
    Pow(f64),
    Abs,
    /// Elementwise maximum of two tensors.
    Maximum,
    Sum,
    Mean,
    /// Mean over the leading (trajectory) axis.
    MeanAxis0,
    /// Population variance over the leading (trajectory) axis.
    VarAxis0,
    /// Euclidean norm, scalar output.
    Norm2,
    /// Euclidean distance `||a - b||`, scalar output.
    Distance,
    /// `sqrt(mean_i (e_i / (atol + max(|z_i|, |z'_i|) rtol))^2)` over inputs `(e, z, z')`.
    WeightedRms { atol: f64, rtol: f64 },
    /// `sum_i c_i x_i` over equally shaped inputs.
    LinComb(Vec<f64>),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Reshape(Vec<usize>),
    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    SoftmaxCrossEntropy { labels: Vec<usize> },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Scale(_) => "scale",
            OpKind::Offset(_) => "offset",
            OpKind::AddRow => "add_row",
            OpKind::MatMul => "matmul",
            OpKind::Dense { .. } => "dense",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Pow(_) => "pow",
            OpKind::Abs => "abs",
            OpKind::Maximum => "maximum",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::MeanAxis0 => "mean_axis0",
            OpKind::VarAxis0 => "var_axis0",
            OpKind::Norm2 => "norm2",
            OpKind::Distance => "distance",
            OpKind::WeightedRms { .. } => "weighted_rms",
            OpKind::LinComb(_) => "lincomb",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Reshape(_) => "reshape",
            OpKind::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Leaf => Some(0),
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::AddRow
            | OpKind::MatMul
            | OpKind::Maximum
            | OpKind::Distance => Some(2),
            OpKind::Dense { .. } | OpKind::WeightedRms { .. } => Some(3),
            OpKind::LinComb(c) => Some(c.len()),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn powc(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

fn mismatch(op: &OpKind, inputs: &[&Tensor]) -> TensorError {
    TensorError::ShapeMismatch {
        op: op.name(),
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn same_shape(op: &OpKind, inputs: &[&Tensor]) -> Result<(), TensorError> {
    let first = inputs[0].shape();
    if inputs.iter().all(|t| t.shape() == first) {
        Ok(())
    } else {
        Err(mismatch(op, inputs))
    }
}

/// `C = A B (+ beta C)` on strided row/column views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Sizes `(outer, axis_len, inner)` of a tensor split around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn forward(op: &OpKind, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(TensorError::Arity {
                op: op.name(),
                expected: n,
                actual: inputs.len(),
            });
        }
    }
    let out = match op {
        OpKind::Leaf => return Err(TensorError::Arity { op: "leaf", expected: 0, actual: 0 }),
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::Maximum => {
            same_shape(op, inputs)?;
            let f: fn(f64, f64) -> f64 = match op {
                OpKind::Add => |a, b| a + b,
                OpKind::Sub => |a, b| a - b,
                OpKind::Mul => |a, b| a * b,
                OpKind::Div => |a, b| a / b,
                _ => f64::max,
            };
            inputs[0].zip_map(inputs[1], f)
        }
        OpKind::Scale(c) => inputs[0].map(|x| c * x),
        OpKind::Offset(c) => inputs[0].map(|x| x + c),
        OpKind::AddRow => {
            let (x, b) = (inputs[0], inputs[1]);
            let n = b.len();
            if b.rank() != 1 || x.rank() == 0 || x.shape()[x.rank() - 1] != n {
                return Err(mismatch(op, inputs));
            }
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(n) {
                for (v, bias) in row.iter_mut().zip(b.data()) {
                    *v += bias;
                }
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        }
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch(op, inputs));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), 0.0, &mut c, (n, 1));
            Tensor::from_parts(vec![m, n], c)
        }
        OpKind::Dense { activation, time } => {
            let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
            let extra = usize::from(time.is_some());
            if x.rank() != 2 || w.rank() != 2 || b.rank() != 1 {
                return Err(mismatch(op, inputs));
            }
            let (batch, n_in) = (x.shape()[0], x.shape()[1]);
            let (m, wcols) = (w.shape()[0], w.shape()[1]);
            if wcols != n_in + extra || b.len() != m {
                return Err(mismatch(op, inputs));
            }
            let mut pre = vec![0.0; batch * m];
            gemm(batch, n_in, m, x.data(), (n_in, 1), w.data(), (1, wcols), 0.0, &mut pre, (m, 1));
            let mut shift = b.data().to_vec();
            if let Some(t) = time {
                for (o, s) in shift.iter_mut().enumerate() {
                    *s += t * w.data()[o * wcols + n_in];
                }
            }
            for row in pre.chunks_mut(m) {
                for (v, s) in row.iter_mut().zip(&shift) {
                    *v = activation.apply(*v + s);
                }
            }
            Tensor::from_parts(vec![batch, m], pre)
        }
        OpKind::Tanh => inputs[0].map(f64::tanh),
        OpKind::Sigmoid => inputs[0].map(sigmoid),
        OpKind::Pow(p) => inputs[0].map(|x| powc(x, *p)),
        OpKind::Abs => inputs[0].map(f64::abs),
        OpKind::Sum => Tensor::scalar(inputs[0].sum()),
        OpKind::Mean => {
            if inputs[0].is_empty() {
                return Err(TensorError::Empty { op: op.name() });
            }
            Tensor::scalar(inputs[0].sum() / inputs[0].len() as f64)
        }
        OpKind::MeanAxis0 | OpKind::VarAxis0 => {
            let x = inputs[0];
            if x.rank() == 0 || x.shape()[0] == 0 {
                return Err(mismatch(op, inputs));
            }
            let rows = x.shape()[0];
            let inner = x.len() / rows;
            let mean = column_mean(x.data(), rows, inner);
            let data = if *op == OpKind::MeanAxis0 {
                mean
            } else {
                let mut var = vec![0.0; inner];
                for row in x.data().chunks(inner) {
                    for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                        *v += (x - m) * (x - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                var
            };
            Tensor::from_parts(x.shape()[1..].to_vec(), data)
        }
        OpKind::Norm2 => Tensor::scalar(inputs[0].norm()),
        OpKind::Distance => {
            same_shape(op, inputs)?;
            let d: f64 = inputs[0]
                .data()
                .iter()
                .zip(inputs[1].data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Tensor::scalar(d.sqrt())
        }
        OpKind::WeightedRms { atol, rtol } => {
            same_shape(op, inputs)?;
            let (e, z, zn) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
            if e.is_empty() {
                return Err(TensorError::Empty { op: op.name() });
            }
            let mut acc = 0.0;
            for i in 0..e.len() {
                let r = e[i] / (atol + z[i].abs().max(zn[i].abs()) * rtol);
                acc += r * r;
            }
            Tensor::scalar((acc / e.len() as f64).sqrt())
        }
        OpKind::LinComb(coefs) => {
            if coefs.is_empty() {
                return Err(TensorError::Empty { op: op.name() });
            }
            same_shape(op, inputs)?;
            let mut data: Vec<f64> = inputs[0].data().iter().map(|x| coefs[0] * x).collect();
            for (c, t) in coefs.iter().zip(inputs).skip(1) {
                if *c == 0.0 {
                    continue;
                }
                for (acc, x) in data.iter_mut().zip(t.data()) {
                    *acc += c * x;
                }
            }
            Tensor::from_parts(inputs[0].shape().to_vec(), data)
        }
        OpKind::Concat { axis } => {
            let first = inputs.first().ok_or(TensorError::Empty { op: "concat" })?;
            let axis = *axis;
            if axis >= first.rank() {
                return Err(mismatch(op, inputs));
            }
            for t in inputs {
                if t.rank() != first.rank()
                    || t.shape()
                        .iter()
                        .zip(first.shape())
                        .enumerate()
                        .any(|(d, (a, b))| d != axis && a != b)
                {
                    return Err(mismatch(op, inputs));
                }
            }
            let (outer, _, inner) = split_axis(first.shape(), axis);
            let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in inputs {
                    let chunk = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = first.shape().to_vec();
            shape[axis] = total;
            Tensor::from_parts(shape, data)
        }
        OpKind::Slice { axis, start, end } => {
            let x = inputs[0];
            if *axis >= x.rank() || start >= end || *end > x.shape()[*axis] {
                return Err(mismatch(op, inputs));
            }
            let (outer, len, inner) = split_axis(x.shape(), *axis);
            let mut data = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                let base = o * len * inner;
                data.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[*axis] = end - start;
            Tensor::from_parts(shape, data)
        }
        OpKind::Reshape(shape) => inputs[0]
            .reshape(shape)
            .map_err(|_| mismatch(op, inputs))?,
        OpKind::SoftmaxCrossEntropy { labels } => {
            let x = inputs[0];
            if x.rank() != 2 || x.shape()[0] != labels.len() || labels.is_empty() {
                return Err(mismatch(op, inputs));
            }
            let classes = x.shape()[1];
            let mut total = 0.0;
            for (row, &label) in x.data().chunks(classes).zip(labels) {
                if label >= classes {
                    return Err(TensorError::LabelOutOfRange { label, classes });
                }
                total += log_sum_exp(row) - row[label];
            }
            Tensor::scalar(total / labels.len() as f64)
        }
    };
    Ok(out)
}

fn column_mean(data: &[f64], rows: usize, inner: usize) -> Vec<f64> {
    let mut mean = vec![0.0; inner];
    for row in data.chunks(inner) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    mean
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Vector-Jacobian products of `op` for every input flagged in `needs`.
pub(crate) fn backward(
    op: &OpKind,
    inputs: &[&Tensor],
    out: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let mut grads: Vec<Option<Tensor>> = vec![None; inputs.len()];
    let want = |i: usize| needs[i];
    match op {
        OpKind::Leaf => {}
        OpKind::Add => {
            for (i, slot) in grads.iter_mut().enumerate() {
                if want(i) {
                    *slot = Some(g.clone());
                }
            }
        }
        OpKind::Sub => {
            if want(0) {
                grads[0] = Some(g.clone());
            }
            if want(1) {
                grads[1] = Some(g.map(|x| -x));
            }
        }
        OpKind::Mul => {
            if want(0) {
                grads[0] = Some(g.zip_map(inputs[1], |g, b| g * b));
            }
            if want(1) {
                grads[1] = Some(g.zip_map(inputs[0], |g, a| g * a));
            }
        }
        OpKind::Div => {
            if want(0) {
                grads[0] = Some(g.zip_map(inputs[1], |g, b| g / b));
            }
            if want(1) {
                let t = g.zip_map(out, |g, y| g * y);
                grads[1] = Some(t.zip_map(inputs[1], |gy, b| -gy / b));
            }
        }
        OpKind::Maximum => {
            let (a, b) = (inputs[0], inputs[1]);
            if want(0) {
                let mask = a.zip_map(b, |a, b| if a >= b { 1.0 } else { 0.0 });
                grads[0] = Some(g.zip_map(&mask, |g, m| g * m));
            }
            if want(1) {
                let mask = a.zip_map(b, |a, b| if a >= b { 0.0 } else { 1.0 });
                grads[1] = Some(g.zip_map(&mask, |g, m| g * m));
            }
        }
        OpKind::Scale(c) => grads[0] = Some(g.map(|x| c * x)),
        OpKind::Offset(_) | OpKind::Reshape(_) => {
            grads[0] = Some(Tensor::from_parts(inputs[0].shape().to_vec(), g.data().to_vec()))
        }
        OpKind::AddRow => {
            if want(0) {
                grads[0] = Some(g.clone());
            }
            if want(1) {
                let n = inputs[1].len();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                grads[1] = Some(Tensor::from_parts(vec![n], db));
            }
        }
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            if want(0) {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), (n, 1), b.data(), (1, n), 0.0, &mut da, (k, 1));
                grads[0] = Some(Tensor::from_parts(vec![m, k], da));
            }
            if want(1) {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, a.data(), (1, k), g.data(), (n, 1), 0.0, &mut db, (n, 1));
                grads[1] = Some(Tensor::from_parts(vec![k, n], db));
            }
        }
        OpKind::Dense { activation, time } => {
            let (x, w) = (inputs[0], inputs[1]);
            let (batch, n_in) = (x.shape()[0], x.shape()[1]);
            let (m, wcols) = (w.shape()[0], w.shape()[1]);
            let gp: Vec<f64> = match activation {
                Activation::Identity => g.data().to_vec(),
                act => g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * act.derivative_from_output(*y))
                    .collect(),
            };
            if want(0) {
                let mut dx = vec![0.0; batch * n_in];
                gemm(batch, m, n_in, &gp, (m, 1), w.data(), (wcols, 1), 0.0, &mut dx, (n_in, 1));
                grads[0] = Some(Tensor::from_parts(vec![batch, n_in], dx));
            }
            let needs_bias_sums = want(2) || (want(1) && time.is_some());
            let col_sums = if needs_bias_sums {
                let mut s = vec![0.0; m];
                for row in gp.chunks(m) {
                    for (acc, v) in s.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                s
            } else {
                Vec::new()
            };
            if want(1) {
                let mut dw = vec![0.0; m * wcols];
                gemm(m, batch, n_in, &gp, (1, m), x.data(), (n_in, 1), 0.0, &mut dw, (wcols, 1));
                if let Some(t) = time {
                    for (o, s) in col_sums.iter().enumerate() {
                        dw[o * wcols + n_in] = t * s;
                    }
                }
                grads[1] = Some(Tensor::from_parts(vec![m, wcols], dw));
            }
            if want(2) {
                grads[2] = Some(Tensor::from_parts(vec![m], col_sums));
            }
        }
        OpKind::Tanh => grads[0] = Some(g.zip_map(out, |g, y| g * (1.0 - y * y))),
        OpKind::Sigmoid => grads[0] = Some(g.zip_map(out, |g, y| g * y * (1.0 - y))),
        OpKind::Pow(p) => {
            let p = *p;
            grads[0] = Some(g.zip_map(inputs[0], |g, x| g * p * powc(x, p - 1.0)))
        }
        OpKind::Abs => {
            grads[0] = Some(g.zip_map(inputs[0], |g, x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            }))
        }
        OpKind::Sum => grads[0] = Some(Tensor::full(inputs[0].shape(), g.item())),
        OpKind::Mean => {
            let n = inputs[0].len() as f64;
            grads[0] = Some(Tensor::full(inputs[0].shape(), g.item() / n))
        }
        OpKind::MeanAxis0 => {
            let x = inputs[0];
            let rows = x.shape()[0];
            let scale = 1.0 / rows as f64;
            let mut data = Vec::with_capacity(x.len());
            for _ in 0..rows {
                data.extend(g.data().iter().map(|v| v * scale));
            }
            grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), data));
        }
        OpKind::VarAxis0 => {
            let x = inputs[0];
            let rows = x.shape()[0];
            let inner = x.len() / rows;
            let mean = column_mean(x.data(), rows, inner);
            let scale = 2.0 / rows as f64;
            let mut data = Vec::with_capacity(x.len());
            for row in x.data().chunks(inner) {
                for ((x, m), g) in row.iter().zip(&mean).zip(g.data()) {
                    data.push(scale * (x - m) * g);
                }
            }
            grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), data));
        }
        OpKind::Norm2 => {
            let norm = out.item();
            let k = if norm > 0.0 { g.item() / norm } else { 0.0 };
            grads[0] = Some(inputs[0].map(|x| k * x));
        }
        OpKind::Distance => {
            let d = out.item();
            let k = if d > 0.0 { g.item() / d } else { 0.0 };
            let diff = inputs[0].zip_map(inputs[1], |a, b| k * (a - b));
            if want(1) {
                grads[1] = Some(diff.map(|v| -v));
            }
            if want(0) {
                grads[0] = Some(diff);
            }
        }
        OpKind::WeightedRms { atol, rtol } => {
            let q = out.item();
            let (e, z, zn) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
            let n = e.len();
            let mut de = vec![0.0; n];
            let mut dz = vec![0.0; n];
            let mut dzn = vec![0.0; n];
            if q > 0.0 {
                let k = g.item() / (n as f64 * q);
                for i in 0..n {
                    let (az, azn) = (z[i].abs(), zn[i].abs());
                    let w = atol + az.max(azn) * rtol;
                    let r = e[i] / w;
                    de[i] = k * r / w;
                    // dq/dw = -k r^2 / w, routed to whichever state set the scale
                    let dw = -k * r * r / w;
                    if az >= azn {
                        dz[i] = dw * rtol * sign(z[i]);
                    } else {
                        dzn[i] = dw * rtol * sign(zn[i]);
                    }
                }
            }
            let shape = inputs[0].shape().to_vec();
            grads[0] = Some(Tensor::from_parts(shape.clone(), de));
            grads[1] = Some(Tensor::from_parts(shape.clone(), dz));
            grads[2] = Some(Tensor::from_parts(shape, dzn));
        }
        OpKind::LinComb(coefs) => {
            for (i, c) in coefs.iter().enumerate() {
                if want(i) {
                    grads[i] = Some(g.map(|v| c * v));
                }
            }
        }
        OpKind::Concat { axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for (i, t) in inputs.iter().enumerate() {
                let len = t.shape()[*axis];
                if want(i) {
                    let mut data = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    grads[i] = Some(Tensor::from_parts(t.shape().to_vec(), data));
                }
                offset += len;
            }
        }
        OpKind::Slice { axis, start, end } => {
            let x = inputs[0];
            let (outer, len, inner) = split_axis(x.shape(), *axis);
            let mut data = vec![0.0; x.len()];
            let width = (end - start) * inner;
            for o in 0..outer {
                let dst = o * len * inner + start * inner;
                data[dst..dst + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
            }
            grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), data));
        }
        OpKind::SoftmaxCrossEntropy { labels } => {
            let x = inputs[0];
            let classes = x.shape()[1];
            let k = g.item() / labels.len() as f64;
            let mut data = Vec::with_capacity(x.len());
            for (row, &label) in x.data().chunks(classes).zip(labels) {
                let lse = log_sum_exp(row);
                for (j, v) in row.iter().enumerate() {
                    let p = (v - lse).exp();
                    data.push(k * (p - if j == label { 1.0 } else { 0.0 }));
                }
            }
            grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), data));
        }
    }
    for (slot, need) in grads.iter_mut().zip(needs) {
        if !need {
            *slot = None;
        }
    }
    grads
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
