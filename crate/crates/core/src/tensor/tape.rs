use std::rc::Rc;

use super::{matmul_into, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Binary elementwise operations.
///
/// Broadcasting rule: either both operands have the same shape, or the left
/// operand is a matrix `[m, n]` and the right operand is a vector `[n]`, in
/// which case the vector is applied to every row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: BinaryKind,
        lhs: Var,
        rhs: Var,
        broadcast: bool,
    },
    Scale(Var, f64),
    AddScalar(Var),
    Powf(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    ConcatCols(Var, Var),
    SumRows(Var),
    SumAll(Var),
    ScaleRows(Var, Rc<[f64]>),
    Gather(Var, Rc<[usize]>),
    SegmentSum {
        input: Var,
        segment: Rc<[usize]>,
    },
    LogSoftmaxRows(Var),
    Pick(Var, Rc<[usize]>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Record of one forward computation.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction. A tape is built fresh for every forward pass.
///
/// Calling [`Tape::backward`] twice without [`Tape::zero_grad`] in between
/// accumulates: the second call adds the same gradients again.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    if t.rank() != 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input value. Gradients are tracked only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros when no backward pass reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Sign pattern (`x > 0`) of every input to a non-smooth primitive
    /// (`relu`, `abs`). Two evaluations with equal signatures lie on the same
    /// smooth piece of the recorded function.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) | Op::Abs(x) = node.op {
                sig.extend(self.nodes[x.0].value.data().iter().map(|&v| v > 0.0));
            }
        }
        sig
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Op,
        op_name: &'static str,
        inputs: &[Var],
    ) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b), "matmul", &[a, b])
    }

    fn binary(
        &mut self,
        kind: BinaryKind,
        name: &'static str,
        a: Var,
        b: Var,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if av.rank() == 2 && bv.rank() == 1 && av.shape()[1] == bv.shape()[0] {
            true
        } else {
            return Err(shape_err(name, av, bv));
        };
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
        };
        let data: Vec<f64> = if broadcast {
            let n = bv.len();
            av.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv.data()[i % n]))
                .collect()
        } else {
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(
            value,
            Op::Binary {
                kind,
                lhs: a,
                rhs: b,
                broadcast,
            },
            name,
            &[a, b],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Sub, "sub", a, b)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Div, "div", a, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor), "scale", &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a), "add_scalar", &[a])
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x.powf(p));
        self.push(value, Op::Powf(a, p), "powf", &[a])
    }

    /// Rectifier; its derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a), "relu", &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), "sigmoid", &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a), "softplus", &[a])
    }

    /// Absolute value; derivative at zero is zero.
    pub fn abs(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(f64::abs);
        self.push(value, Op::Abs(a), "abs", &[a])
    }

    /// `[m, p] ++ [m, q] -> [m, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, p) = require_rank2("concat_cols", av)?;
        let (mb, q) = require_rank2("concat_cols", bv)?;
        if m != mb {
            return Err(shape_err("concat_cols", av, bv));
        }
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&av.data()[i * p..(i + 1) * p]);
            data.extend_from_slice(&bv.data()[i * q..(i + 1) * q]);
        }
        let value = Tensor::new(vec![m, p + q], data)?;
        self.push(value, Op::ConcatCols(a, b), "concat_cols", &[a, b])
    }

    /// Column sums of a matrix: `[m, n] -> [n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (m, n) = require_rank2("sum_rows", av)?;
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (acc, &x) in data.iter_mut().zip(&av.data()[i * n..(i + 1) * n]) {
                *acc += x;
            }
        }
        self.push(Tensor::vector(data), Op::SumRows(a), "sum_rows", &[a])
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), "sum_all", &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Multiplies row `i` of a matrix by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Rc<[f64]>) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (m, n) = require_rank2("scale_rows", av)?;
        if factors.len() != m {
            return Err(TensorError::Shape {
                op: "scale_rows",
                lhs: av.shape().to_vec(),
                rhs: vec![factors.len()],
            });
        }
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * factors[i / n.max(1)])
            .collect();
        let value = Tensor::new(vec![m, n], data)?;
        self.push(value, Op::ScaleRows(a, factors), "scale_rows", &[a])
    }

    /// Row gather: output row `i` is input row `index[i]`.
    pub fn gather(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (m, _) = require_rank2("gather", av)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(TensorError::Index {
                op: "gather",
                index: bad,
                len: m,
            });
        }
        let value = av.select_rows(&index);
        self.push(value, Op::Gather(a, index), "gather", &[a])
    }

    /// Segment sum: output row `s` is the sum of input rows `r` with
    /// `segment[r] == s`, over `num_segments` segments.
    ///
    /// Rows are accumulated in the order listed by `order` (a permutation of
    /// the input rows). Fixing that order makes the result independent of how
    /// the input rows happen to be stored.
    pub fn segment_sum(
        &mut self,
        a: Var,
        segment: Rc<[usize]>,
        order: Rc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (m, n) = require_rank2("segment_sum", av)?;
        if segment.len() != m || order.len() != m {
            return Err(TensorError::Shape {
                op: "segment_sum",
                lhs: av.shape().to_vec(),
                rhs: vec![segment.len(), order.len()],
            });
        }
        let mut data = vec![0.0; num_segments * n];
        for &r in order.iter() {
            let s = segment[r];
            if s >= num_segments {
                return Err(TensorError::Index {
                    op: "segment_sum",
                    index: s,
                    len: num_segments,
                });
            }
            let src = &av.data()[r * n..(r + 1) * n];
            for (acc, &x) in data[s * n..(s + 1) * n].iter_mut().zip(src) {
                *acc += x;
            }
        }
        let value = Tensor::new(vec![num_segments, n], data)?;
        self.push(
            value,
            Op::SegmentSum { input: a, segment },
            "segment_sum",
            &[a],
        )
    }

    /// Row-wise log-softmax of a matrix.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (m, n) = require_rank2("log_softmax_rows", av)?;
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &av.data()[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&x| x - lse));
        }
        let value = Tensor::new(vec![m, n], data)?;
        self.push(value, Op::LogSoftmaxRows(a), "log_softmax_rows", &[a])
    }

    /// Picks column `index[i]` from row `i`: `[m, n] -> [m]`.
    pub fn pick(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (m, n) = require_rank2("pick", av)?;
        if index.len() != m {
            return Err(TensorError::Shape {
                op: "pick",
                lhs: av.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let mut data = Vec::with_capacity(m);
        for (i, &j) in index.iter().enumerate() {
            if j >= n {
                return Err(TensorError::Index {
                    op: "pick",
                    index: j,
                    len: n,
                });
            }
            data.push(av.data()[i * n + j]);
        }
        self.push(Tensor::vector(data), Op::Pick(a, index), "pick", &[a])
    }

    /// Reverse pass from a scalar `loss`. Gradients are added into every
    /// gradient-tracking node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut adj);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g)?,
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut send = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => {
                    for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                        *a += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if wants(*a) {
                    // dA = dC * B^T
                    let bt = bv.transpose().expect("rank checked in forward");
                    let mut da = vec![0.0; m * k];
                    matmul_into(g.data(), bt.data(), &mut da, m, n, k);
                    send(*a, Tensor::new(vec![m, k], da).expect("shape"));
                }
                if wants(*b) {
                    // dB = A^T * dC
                    let at = av.transpose().expect("rank checked in forward");
                    let mut db = vec![0.0; k * n];
                    matmul_into(at.data(), g.data(), &mut db, k, m, n);
                    send(*b, Tensor::new(vec![k, n], db).expect("shape"));
                }
            }
            Op::Binary {
                kind,
                lhs,
                rhs,
                broadcast,
            } => {
                let (av, bv) = (val(*lhs), val(*rhs));
                let nb = bv.len();
                let bat = |i: usize| {
                    if *broadcast {
                        bv.data()[i % nb]
                    } else {
                        bv.data()[i]
                    }
                };
                if wants(*lhs) {
                    let d = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| match kind {
                            BinaryKind::Add | BinaryKind::Sub => gi,
                            BinaryKind::Mul => gi * bat(i),
                            BinaryKind::Div => gi / bat(i),
                        })
                        .collect();
                    send(*lhs, Tensor::new(av.shape().to_vec(), d).expect("shape"));
                }
                if wants(*rhs) {
                    let mut d = vec![0.0; nb];
                    for (i, &gi) in g.data().iter().enumerate() {
                        let j = if *broadcast { i % nb } else { i };
                        d[j] += match kind {
                            BinaryKind::Add => gi,
                            BinaryKind::Sub => -gi,
                            BinaryKind::Mul => gi * av.data()[i],
                            BinaryKind::Div => -gi * av.data()[i] / (bv.data()[j] * bv.data()[j]),
                        };
                    }
                    send(*rhs, Tensor::new(bv.shape().to_vec(), d).expect("shape"));
                }
            }
            Op::Scale(a, f) => send(*a, g.map(|x| x * f)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Powf(a, p) => {
                let av = val(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gi, &x)| gi * p * x.powf(p - 1.0))
                    .collect();
                send(*a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
            }
            Op::Relu(a) => {
                let av = val(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                send(*a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &s)| gi * s * (1.0 - s))
                    .collect();
                send(*a, Tensor::new(out.shape().to_vec(), d).expect("shape"));
            }
            Op::Softplus(a) => {
                let av = val(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gi, &x)| gi * sigmoid(x))
                    .collect();
                send(*a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
            }
            Op::Abs(a) => {
                let av = val(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gi, &x)| {
                        if x > 0.0 {
                            gi
                        } else if x < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(*a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
            }
            Op::ConcatCols(a, b) => {
                let p = val(*a).cols();
                let q = val(*b).cols();
                let m = out.rows();
                let mut da = Vec::with_capacity(m * p);
                let mut db = Vec::with_capacity(m * q);
                for row in g.data().chunks(p + q) {
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                if wants(*a) {
                    send(*a, Tensor::new(vec![m, p], da).expect("shape"));
                }
                if wants(*b) {
                    send(*b, Tensor::new(vec![m, q], db).expect("shape"));
                }
            }
            Op::SumRows(a) => {
                let av = val(*a);
                let n = g.len();
                let d = (0..av.len()).map(|i| g.data()[i % n]).collect();
                send(*a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
            }
            Op::SumAll(a) => {
                let gi = g.data()[0];
                send(*a, Tensor::full(val(*a).shape(), gi));
            }
            Op::ScaleRows(a, factors) => {
                let n = out.cols().max(1);
                let d = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| gi * factors[i / n])
                    .collect();
                send(*a, Tensor::new(out.shape().to_vec(), d).expect("shape"));
            }
            Op::Gather(a, index) => {
                let av = val(*a);
                let n = av.cols();
                let mut d = vec![0.0; av.len()];
                for (i, &src) in index.iter().enumerate() {
                    for c in 0..n {
                        d[src * n + c] += g.data()[i * n + c];
                    }
                }
                send(*a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
            }
            Op::SegmentSum { input, segment, .. } => {
                let av = val(*input);
                let n = av.cols();
                let mut d = Vec::with_capacity(av.len());
                for &s in segment.iter() {
                    d.extend_from_slice(&g.data()[s * n..(s + 1) * n]);
                }
                send(*input, Tensor::new(av.shape().to_vec(), d).expect("shape"));
            }
            Op::LogSoftmaxRows(a) => {
                // dx = g - softmax * sum(g) per row
                let n = out.cols();
                let mut d = Vec::with_capacity(out.len());
                for (grow, orow) in g.data().chunks(n).zip(out.data().chunks(n)) {
                    let gs: f64 = grow.iter().sum();
                    d.extend(grow.iter().zip(orow).map(|(&gi, &lo)| gi - lo.exp() * gs));
                }
                send(*a, Tensor::new(out.shape().to_vec(), d).expect("shape"));
            }
            Op::Pick(a, index) => {
                let av = val(*a);
                let n = av.cols();
                let mut d = vec![0.0; av.len()];
                for (i, &j) in index.iter().enumerate() {
                    d[i * n + j] = g.data()[i];
                }
                send(*a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
            }
        }
    }
}
