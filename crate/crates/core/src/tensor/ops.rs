use super::{Result, Tensor, TensorError};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Operation kinds understood by [`forward`] and the tape.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    /// Same shape, or a 1-d right operand broadcast over the rows of a 2-d left operand.
    Add,
    Sub,
    /// Elementwise product of equally shaped tensors.
    Mul,
    Scale(f64),
    /// Concatenation along the last axis (rank 1 or 2, equal leading dims).
    Concat,
    SumAll,
    SumAxis(usize),
    MeanAxis(usize),
    Transpose,
    /// Rows of a 2-d tensor, or elements of a 1-d tensor, in the given order.
    SelectRows(Vec<usize>),
    Reshape(Vec<usize>),
    /// Sums the rows of a 2-d tensor into `groups` output rows; row `r` goes
    /// to `group[r]`. Each output entry is summed in ascending value order, so
    /// the result does not depend on the order of the input rows.
    GroupSum { group: Vec<usize>, groups: usize },
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu,
    Exp,
    Log,
    SoftmaxLast,
    MaxLast,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "multiply",
            Op::Scale(_) => "scale",
            Op::Concat => "concat",
            Op::SumAll => "sum",
            Op::SumAxis(_) => "sum_axis",
            Op::MeanAxis(_) => "mean_axis",
            Op::Transpose => "transpose",
            Op::SelectRows(_) => "select_rows",
            Op::Reshape(_) => "reshape",
            Op::GroupSum { .. } => "group_sum",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::LeakyRelu => "leaky_relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::SoftmaxLast => "softmax",
            Op::MaxLast => "max",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::MatMul | Op::Add | Op::Sub | Op::Mul => Some(2),
            Op::Concat => None,
            _ => Some(1),
        }
    }
}

fn shape_err(op: &Op, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn invalid(op: &Op, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op: op.name(),
        msg: msg.into(),
    }
}

fn is_row_broadcast(a: &Tensor, b: &Tensor) -> bool {
    a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0]
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Evaluates `op` on plain tensors.
pub fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(invalid(op, format!("expected {n} inputs, got {}", inputs.len())));
        }
    } else if inputs.is_empty() {
        return Err(invalid(op, "no inputs"));
    }
    let x = inputs[0];
    let unary = |f: &dyn Fn(f64) -> f64| Ok(x.map(f));
    match op {
        Op::MatMul => {
            let b = inputs[1];
            if x.rank() != 2 || b.rank() != 2 || x.shape()[1] != b.shape()[0] {
                return Err(shape_err(op, x, b));
            }
            let (m, k, n) = (x.shape()[0], x.shape()[1], b.shape()[1]);
            Ok(Tensor::from_parts(vec![m, n], matmul_raw(x.data(), b.data(), m, k, n)))
        }
        Op::Add | Op::Sub | Op::Mul => {
            let b = inputs[1];
            let sign = if *op == Op::Sub { -1.0 } else { 1.0 };
            if x.shape() == b.shape() {
                let d = x
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&p, &q)| if *op == Op::Mul { p * q } else { p + sign * q })
                    .collect();
                Ok(Tensor::from_parts(x.shape().to_vec(), d))
            } else if *op != Op::Mul && is_row_broadcast(x, b) {
                let c = b.len();
                let d = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| p + sign * b.data()[i % c])
                    .collect();
                Ok(Tensor::from_parts(x.shape().to_vec(), d))
            } else {
                Err(shape_err(op, x, b))
            }
        }
        Op::Scale(s) => unary(&|v| v * s),
        Op::Concat => {
            let rank = x.rank();
            if rank == 0 || rank > 2 || inputs.iter().any(|t| t.rank() != rank) {
                return Err(invalid(op, "inputs must all be rank 1 or all rank 2"));
            }
            if rank == 1 {
                let d = inputs.iter().flat_map(|t| t.data().iter().copied()).collect::<Vec<_>>();
                let n = d.len();
                return Ok(Tensor::from_parts(vec![n], d));
            }
            let rows = x.shape()[0];
            if let Some(bad) = inputs.iter().find(|t| t.shape()[0] != rows) {
                return Err(shape_err(op, x, bad));
            }
            let cols: usize = inputs.iter().map(|t| t.shape()[1]).sum();
            let mut d = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for t in inputs {
                    d.extend_from_slice(t.row(r));
                }
            }
            Ok(Tensor::from_parts(vec![rows, cols], d))
        }
        Op::SumAll => Ok(Tensor::scalar(x.data().iter().sum())),
        Op::SumAxis(axis) | Op::MeanAxis(axis) => {
            let mean = matches!(op, Op::MeanAxis(_));
            match (x.rank(), axis) {
                (1, 0) => {
                    let s: f64 = x.data().iter().sum();
                    let n = x.len().max(1) as f64;
                    Ok(Tensor::scalar(if mean { s / n } else { s }))
                }
                (2, 0) | (2, 1) => {
                    let (r, c) = (x.shape()[0], x.shape()[1]);
                    let (out_n, div) = if *axis == 0 { (c, r) } else { (r, c) };
                    let mut d = vec![0.0; out_n];
                    for i in 0..r {
                        for j in 0..c {
                            d[if *axis == 0 { j } else { i }] += x.data()[i * c + j];
                        }
                    }
                    if mean {
                        let div = div.max(1) as f64;
                        d.iter_mut().for_each(|v| *v /= div);
                    }
                    Ok(Tensor::from_parts(vec![out_n], d))
                }
                _ => Err(invalid(op, format!("axis {axis} out of range for shape {:?}", x.shape()))),
            }
        }
        Op::Transpose => {
            if x.rank() != 2 {
                return Err(invalid(op, format!("needs rank 2, got {:?}", x.shape())));
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    d[j * r + i] = x.data()[i * c + j];
                }
            }
            Ok(Tensor::from_parts(vec![c, r], d))
        }
        Op::SelectRows(idx) => {
            let n = x.rows();
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(invalid(op, format!("index {bad} out of range for {n} rows")));
            }
            match x.rank() {
                1 => Ok(Tensor::from_parts(
                    vec![idx.len()],
                    idx.iter().map(|&i| x.data()[i]).collect(),
                )),
                2 => {
                    let mut d = Vec::with_capacity(idx.len() * x.cols());
                    for &i in idx {
                        d.extend_from_slice(x.row(i));
                    }
                    Ok(Tensor::from_parts(vec![idx.len(), x.cols()], d))
                }
                _ => Err(invalid(op, format!("needs rank 1 or 2, got {:?}", x.shape()))),
            }
        }
        Op::Reshape(shape) => x.reshaped(shape),
        Op::GroupSum { group, groups } => {
            if x.rank() != 2 || group.len() != x.rows() {
                return Err(invalid(op, format!("{} group labels for shape {:?}", group.len(), x.shape())));
            }
            if let Some(&bad) = group.iter().find(|&&g| g >= *groups) {
                return Err(invalid(op, format!("group {bad} out of range for {groups} groups")));
            }
            let c = x.cols();
            let mut d = vec![0.0; groups * c];
            let mut buf = Vec::new();
            for g in 0..*groups {
                for j in 0..c {
                    buf.clear();
                    buf.extend(
                        group.iter().enumerate().filter(|(_, &gr)| gr == g).map(|(r, _)| x.data()[r * c + j]),
                    );
                    buf.sort_by(f64::total_cmp);
                    d[g * c + j] = buf.iter().sum();
                }
            }
            Ok(Tensor::from_parts(vec![*groups, c], d))
        }
        Op::Tanh => unary(&f64::tanh),
        Op::Sigmoid => unary(&sigmoid),
        Op::Relu => unary(&|v| v.max(0.0)),
        Op::LeakyRelu => unary(&|v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
        Op::Exp => unary(&f64::exp),
        Op::Log => {
            if let Some(&bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(TensorError::LogDomain(bad));
            }
            unary(&f64::ln)
        }
        Op::SoftmaxLast => {
            if x.rank() == 0 || x.rank() > 2 {
                return Err(invalid(op, format!("needs rank 1 or 2, got {:?}", x.shape())));
            }
            let c = x.cols();
            let mut d = x.to_vec();
            for row in d.chunks_mut(c.max(1)) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
            }
            Ok(Tensor::from_parts(x.shape().to_vec(), d))
        }
        Op::MaxLast => {
            if x.rank() == 0 || x.rank() > 2 || x.cols() == 0 {
                return Err(invalid(op, format!("needs a non-empty rank 1 or 2 tensor, got {:?}", x.shape())));
            }
            let d: Vec<f64> = x
                .data()
                .chunks(x.cols())
                .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let shape = if x.rank() == 1 { vec![] } else { vec![x.rows()] };
            Ok(Tensor::from_parts(shape, d))
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Vector-Jacobian products: given the upstream gradient `g` of `out`,
/// returns one gradient buffer per input (same length as that input).
pub(crate) fn vjp(op: &Op, inputs: &[&Tensor], out: &Tensor, g: &[f64]) -> Vec<Vec<f64>> {
    let x = inputs[0];
    let elementwise = |f: &dyn Fn(usize) -> f64| vec![(0..g.len()).map(|i| g[i] * f(i)).collect()];
    match op {
        Op::MatMul => {
            let b = inputs[1];
            let (m, k, n) = (x.shape()[0], x.shape()[1], b.shape()[1]);
            let (ad, bd) = (x.data(), b.data());
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                for p in 0..k {
                    let brow = &bd[p * n..(p + 1) * n];
                    ga[i * k + p] = grow.iter().zip(brow).map(|(u, v)| u * v).sum();
                }
            }
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                        *o += av * gv;
                    }
                }
            }
            vec![ga, gb]
        }
        Op::Add | Op::Sub => {
            let b = inputs[1];
            let sign = if *op == Op::Sub { -1.0 } else { 1.0 };
            let ga = g.to_vec();
            let gb = if x.shape() == b.shape() {
                g.iter().map(|v| sign * v).collect()
            } else {
                let c = b.len();
                let mut gb = vec![0.0; c];
                for (i, v) in g.iter().enumerate() {
                    gb[i % c] += sign * v;
                }
                gb
            };
            vec![ga, gb]
        }
        Op::Mul => {
            let b = inputs[1];
            vec![
                g.iter().zip(b.data()).map(|(u, v)| u * v).collect(),
                g.iter().zip(x.data()).map(|(u, v)| u * v).collect(),
            ]
        }
        Op::Scale(s) => vec![g.iter().map(|v| v * s).collect()],
        Op::Concat => {
            if x.rank() == 1 {
                let mut off = 0;
                inputs
                    .iter()
                    .map(|t| {
                        let part = g[off..off + t.len()].to_vec();
                        off += t.len();
                        part
                    })
                    .collect()
            } else {
                let rows = x.shape()[0];
                let total = out.shape()[1];
                let mut grads: Vec<Vec<f64>> = inputs.iter().map(|t| Vec::with_capacity(t.len())).collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (gi, t) in grads.iter_mut().zip(inputs) {
                        let c = t.shape()[1];
                        gi.extend_from_slice(&g[off..off + c]);
                        off += c;
                    }
                }
                grads
            }
        }
        Op::SumAll => vec![vec![g[0]; x.len()]],
        Op::SumAxis(axis) | Op::MeanAxis(axis) => {
            let mean = matches!(op, Op::MeanAxis(_));
            if x.rank() == 1 {
                let s = if mean { g[0] / x.len().max(1) as f64 } else { g[0] };
                return vec![vec![s; x.len()]];
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let div = if mean { (if *axis == 0 { r } else { c }).max(1) as f64 } else { 1.0 };
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[if *axis == 0 { j } else { i }] / div;
                }
            }
            vec![gx]
        }
        Op::Transpose => {
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            vec![gx]
        }
        Op::SelectRows(idx) => {
            let c = if x.rank() == 2 { x.cols() } else { 1 };
            let mut gx = vec![0.0; x.len()];
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    gx[i * c + j] += g[k * c + j];
                }
            }
            vec![gx]
        }
        Op::Reshape(_) => vec![g.to_vec()],
        Op::GroupSum { group, .. } => {
            let c = x.cols();
            let mut gx = vec![0.0; x.len()];
            for (r, &gr) in group.iter().enumerate() {
                gx[r * c..(r + 1) * c].copy_from_slice(&g[gr * c..(gr + 1) * c]);
            }
            vec![gx]
        }
        Op::Tanh => elementwise(&|i| 1.0 - out.data()[i] * out.data()[i]),
        Op::Sigmoid => elementwise(&|i| out.data()[i] * (1.0 - out.data()[i])),
        Op::Relu => elementwise(&|i| if x.data()[i] > 0.0 { 1.0 } else { 0.0 }),
        Op::LeakyRelu => elementwise(&|i| if x.data()[i] > 0.0 { 1.0 } else { LEAKY_SLOPE }),
        Op::Exp => elementwise(&|i| out.data()[i]),
        Op::Log => elementwise(&|i| 1.0 / x.data()[i]),
        Op::SoftmaxLast => {
            let c = x.cols();
            let mut gx = vec![0.0; x.len()];
            for ((gr, yr), outr) in g.chunks(c).zip(out.data().chunks(c)).zip(gx.chunks_mut(c)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    outr[j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![gx]
        }
        Op::MaxLast => {
            let c = x.cols();
            let mut gx = vec![0.0; x.len()];
            for (r, row) in x.data().chunks(c).enumerate() {
                gx[r * c + argmax(row)] = g[r];
            }
            vec![gx]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor {
        Tensor::new(shape, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let b = t(&[2, 2], &[3., 4., 5., 6.]);
        assert_eq!(forward(&Op::MatMul, &[&Tensor::eye(2), &b]).unwrap(), b);
    }

    #[test]
    fn matmul_hand_computed() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[5., 6.]);
        let c = forward(&Op::MatMul, &[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17., 39.]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = forward(&Op::MatMul, &[&a, &b]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let s = forward(&Op::SoftmaxLast, &[&Tensor::zeros(&[2])]).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = forward(&Op::SoftmaxLast, &[&t(&[3], &[1000., 999., -1000.])]).unwrap();
        assert!(s.all_finite());
        assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_rejects_non_positive() {
        assert!(matches!(
            forward(&Op::Log, &[&t(&[2], &[1.0, 0.0])]),
            Err(TensorError::LogDomain(_))
        ));
    }

    #[test]
    fn row_broadcast_add() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2], &[10., 20.]);
        assert_eq!(forward(&Op::Add, &[&a, &b]).unwrap().data(), &[11., 22., 13., 24.]);
        assert!(forward(&Op::Add, &[&b, &a]).is_err());
    }

    #[test]
    fn concat_and_reductions() {
        let a = t(&[2, 1], &[1., 2.]);
        let b = t(&[2, 2], &[3., 4., 5., 6.]);
        let c = forward(&Op::Concat, &[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1., 3., 4., 2., 5., 6.]);
        assert_eq!(forward(&Op::SumAxis(0), &[&c]).unwrap().data(), &[3., 8., 10.]);
        assert_eq!(forward(&Op::MeanAxis(1), &[&c]).unwrap().data(), &[8. / 3., 13. / 3.]);
        assert_eq!(forward(&Op::MaxLast, &[&c]).unwrap().data(), &[4., 6.]);
        assert_eq!(forward(&Op::SumAll, &[&c]).unwrap().item(), 21.);
    }

    #[test]
    fn select_rows_bounds() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(forward(&Op::SelectRows(vec![1, 1, 0]), &[&a]).unwrap().data(), &[3., 4., 3., 4., 1., 2.]);
        assert!(forward(&Op::SelectRows(vec![2]), &[&a]).is_err());
    }

    #[test]
    fn deterministic() {
        let a = t(&[2, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]);
        let b = t(&[3, 2], &[1.1, 2.2, -3.3, 4.4, 0.5, 0.25]);
        let x = forward(&Op::MatMul, &[&a, &b]).unwrap();
        let y = forward(&Op::MatMul, &[&a, &b]).unwrap();
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
