//! Reverse-mode autodiff tape.
//!
//! A [`Tape`] owns an append-only list of nodes. Each node records its value
//! and the operation (with parent ids) that produced it, so node index order
//! is already a topological order: [`Tape::backward`] walks the list once in
//! reverse, accumulating gradients into parents. Shared subexpressions
//! therefore sum their contributions, as reverse mode requires.
//!
//! Every operation validates shapes eagerly (reporting both shapes) and
//! checks that its output is finite, so NaN/Inf surface at the op that
//! produced them rather than at the loss.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Exp(NodeId),
    Ln(NodeId),
    Abs(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Sum(NodeId),
    MeanPoolRows(NodeId),
    Softmax { x: NodeId, tau: f64 },
    LogSoftmax { x: NodeId, tau: f64 },
    StopGrad(NodeId),
    AddBiasRows { x: NodeId, b: NodeId },
    ScaleRows { x: NodeId, s: NodeId },
    ScaleByScalar { x: NodeId, s: NodeId },
    DivByScalar { x: NodeId, s: NodeId },
    GatherRows { x: NodeId, idx: Vec<usize> },
    Gather { x: NodeId, idx: Vec<usize> },
    Concat(Vec<NodeId>),
    Reshape(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

/// Append-only reverse-mode autodiff graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads_valid: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input (leaf) node. Leaves receive gradients like any
    /// other node; whether they are parameters or constants is the caller's
    /// concern.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf holding a single scalar.
    pub fn scalar_leaf(&mut self, v: f64) -> Result<NodeId> {
        Ok(self.leaf(Tensor::scalar(v)?))
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Name of the operation that produced a node (leaves are `"leaf"`).
    pub fn op_name(&self, id: NodeId) -> &'static str {
        match self.nodes[id.0].op {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Abs(..) => "abs",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sum(..) => "sum",
            Op::MeanPoolRows(..) => "mean_pool_rows",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::StopGrad(..) => "stopgrad",
            Op::AddBiasRows { .. } => "add_bias_rows",
            Op::ScaleRows { .. } => "scale_rows",
            Op::ScaleByScalar { .. } => "scale_by_scalar",
            Op::DivByScalar { .. } => "div_by_scalar",
            Op::GatherRows { .. } => "gather_rows",
            Op::Gather { .. } => "gather",
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
        }
    }

    /// Parent node ids of a node, in argument order.
    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id.0].op {
            Op::Leaf => vec![],
            Op::Matmul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBiasRows { x: a, b }
            | Op::ScaleRows { x: a, s: b }
            | Op::ScaleByScalar { x: a, s: b }
            | Op::DivByScalar { x: a, s: b } => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Abs(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::MeanPoolRows(a)
            | Op::Softmax { x: a, .. }
            | Op::LogSoftmax { x: a, .. }
            | Op::StopGrad(a)
            | Op::GatherRows { x: a, .. }
            | Op::Gather { x: a, .. }
            | Op::Reshape(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }

    /// Gradient of the last backward root with respect to this node.
    /// Errors if no backward pass has run since the node was added.
    pub fn grad(&self, id: NodeId) -> Result<&Tensor> {
        if !self.grads_valid {
            return Err(Error::usage(
                "gradient requested before backward was run on this tape",
            ));
        }
        Ok(&self.nodes[id.0].grad)
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let grad = Tensor::zeros(value.shape());
        self.nodes.push(Node { value, grad, op });
        self.grads_valid = false;
        NodeId(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, op_name: &str, value: Tensor, op: Op) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: op_name.into(),
            });
        }
        Ok(self.push(value, op))
    }

    fn check_same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    // ---- primitive operations -------------------------------------------

    /// Matrix product of two rank-2 tensors, `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.value(a).dims2()?;
        let (kb, n) = self.value(b).dims2()?;
        if ka != kb {
            return Err(Error::shape(
                "matmul",
                format!("[{m},{ka}] x [{ka},n]"),
                format!("[{m},{ka}] x [{kb},{n}]"),
            ));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for k in 0..ka {
                let aik = av[i * ka + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[k * n..(k + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        self.push_checked("matmul", Tensor::new(&[m, n], out)?, Op::Matmul(a, b))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("add", Tensor::new(&shape, data)?, Op::Add(a, b))
    }

    /// Elementwise difference of two same-shape tensors.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("sub", Tensor::new(&shape, data)?, Op::Sub(a, b))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("mul", Tensor::new(&shape, data)?, Op::Mul(a, b))
    }

    /// Multiply every element by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("scale", Tensor::new(&shape, data)?, Op::Scale(a, c))
    }

    /// Elementwise exponential.
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.exp()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("exp", Tensor::new(&shape, data)?, Op::Exp(a))
    }

    /// Elementwise natural logarithm. Non-positive inputs produce a
    /// non-finite error naming this op.
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.ln()).collect();
        let shape = self.value(a).shape().to_vec();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "ln".into() });
        }
        self.push_checked("ln", Tensor::new(&shape, data)?, Op::Ln(a))
    }

    /// Elementwise absolute value (subgradient 0 at the kink).
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.abs()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("abs", Tensor::new(&shape, data)?, Op::Abs(a))
    }

    /// Elementwise hyperbolic tangent — the smooth nonlinearity used for
    /// every MLP in the crate.
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("tanh", Tensor::new(&shape, data)?, Op::Tanh(a))
    }

    /// Elementwise logistic sigmoid, computed stably for large |x|.
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("sigmoid", Tensor::new(&shape, data)?, Op::Sigmoid(a))
    }

    /// Sum of all elements, yielding a shape-`[1]` scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push_checked("sum", Tensor::scalar(s)?, Op::Sum(a))
    }

    /// Column-wise mean over the rows of a rank-2 tensor: `[n,d] -> [d]`.
    pub fn mean_pool_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, d) = self.value(a).dims2()?;
        if n == 0 {
            return Err(Error::EmptyInput {
                what: "mean_pool_rows over zero rows".into(),
            });
        }
        let v = self.value(a).data();
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += v[i * d + j];
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        self.push_checked(
            "mean_pool_rows",
            Tensor::new(&[d], out)?,
            Op::MeanPoolRows(a),
        )
    }

    /// Temperature softmax over a rank-1 tensor. Inputs are max-shifted
    /// before exponentiation, so outputs stay finite for any finite input.
    pub fn softmax(&mut self, x: NodeId, tau: f64) -> Result<NodeId> {
        check_tau("softmax", tau)?;
        let xv = self.value(x);
        if xv.shape().len() != 1 || xv.is_empty() {
            return Err(Error::shape(
                "softmax",
                "non-empty rank 1",
                format!("{:?}", xv.shape()),
            ));
        }
        let out = softmax_values(xv.data(), tau);
        let n = out.len();
        self.push_checked("softmax", Tensor::new(&[n], out)?, Op::Softmax { x, tau })
    }

    /// Temperature log-softmax over a rank-1 tensor, max-shifted for
    /// stability. `exp(log_softmax(x))` equals `softmax(x)` to roundoff.
    pub fn log_softmax(&mut self, x: NodeId, tau: f64) -> Result<NodeId> {
        check_tau("log_softmax", tau)?;
        let xv = self.value(x);
        if xv.shape().len() != 1 || xv.is_empty() {
            return Err(Error::shape(
                "log_softmax",
                "non-empty rank 1",
                format!("{:?}", xv.shape()),
            ));
        }
        let scaled: Vec<f64> = xv.data().iter().map(|v| v / tau).collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scaled.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let out: Vec<f64> = scaled.iter().map(|v| v - lse).collect();
        let n = out.len();
        self.push_checked(
            "log_softmax",
            Tensor::new(&[n], out)?,
            Op::LogSoftmax { x, tau },
        )
    }

    /// Identity forward, zero backward: gradients do not flow past this
    /// node into its parent.
    pub fn stopgrad(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).clone();
        self.push_checked("stopgrad", v, Op::StopGrad(a))
    }

    /// Add a rank-1 bias to every row of a rank-2 tensor.
    pub fn add_bias_rows(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, d) = self.value(x).dims2()?;
        if self.value(b).shape() != [d] {
            return Err(Error::shape(
                "add_bias_rows",
                format!("[{d}]"),
                format!("{:?}", self.value(b).shape()),
            ));
        }
        let xv = self.value(x).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = xv[i * d + j] + bv[j];
            }
        }
        self.push_checked(
            "add_bias_rows",
            Tensor::new(&[n, d], out)?,
            Op::AddBiasRows { x, b },
        )
    }

    /// Scale row `i` of a rank-2 tensor by `s[i]`.
    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (n, d) = self.value(x).dims2()?;
        if self.value(s).shape() != [n] {
            return Err(Error::shape(
                "scale_rows",
                format!("[{n}]"),
                format!("{:?}", self.value(s).shape()),
            ));
        }
        let xv = self.value(x).data();
        let sv = self.value(s).data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = xv[i * d + j] * sv[i];
            }
        }
        self.push_checked(
            "scale_rows",
            Tensor::new(&[n, d], out)?,
            Op::ScaleRows { x, s },
        )
    }

    /// Multiply every element of `x` by the shape-`[1]` scalar node `s`.
    pub fn scale_by_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s).item().map_err(|_| {
            Error::shape(
                "scale_by_scalar",
                "[1] scalar",
                format!("{:?}", self.value(s).shape()),
            )
        })?;
        let data = self.value(x).data().iter().map(|v| v * sv).collect();
        let shape = self.value(x).shape().to_vec();
        self.push_checked(
            "scale_by_scalar",
            Tensor::new(&shape, data)?,
            Op::ScaleByScalar { x, s },
        )
    }

    /// Divide every element of `x` by the shape-`[1]` scalar node `s`.
    pub fn div_by_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s).item().map_err(|_| {
            Error::shape(
                "div_by_scalar",
                "[1] scalar",
                format!("{:?}", self.value(s).shape()),
            )
        })?;
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v / sv).collect();
        let shape = self.value(x).shape().to_vec();
        self.push_checked(
            "div_by_scalar",
            Tensor::new(&shape, data)?,
            Op::DivByScalar { x, s },
        )
    }

    /// Select rows of a rank-2 tensor: `out[i] = x[idx[i]]`. Duplicate
    /// indices are allowed; backward scatter-adds.
    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (n, d) = self.value(x).dims2()?;
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::usage(format!(
                "gather_rows index {bad} out of range for {n} rows"
            )));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&xv[i * d..(i + 1) * d]);
        }
        self.push_checked(
            "gather_rows",
            Tensor::new(&[idx.len(), d], out)?,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    /// Select elements of a rank-1 tensor: `out[i] = x[idx[i]]`.
    pub fn gather(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 1 {
            return Err(Error::shape(
                "gather",
                "rank 1",
                format!("{:?}", xv.shape()),
            ));
        }
        let n = xv.len();
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::usage(format!(
                "gather index {bad} out of range for length {n}"
            )));
        }
        let data: Vec<f64> = idx.iter().map(|&i| xv.data()[i]).collect();
        self.push_checked(
            "gather",
            Tensor::new(&[idx.len()], data)?,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    /// Concatenate rank-1 tensors into one rank-1 tensor.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput {
                what: "concat of zero tensors".into(),
            });
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 1 {
                return Err(Error::shape(
                    "concat",
                    "rank 1 parts",
                    format!("{:?}", v.shape()),
                ));
            }
            data.extend_from_slice(v.data());
        }
        let n = data.len();
        self.push_checked(
            "concat",
            Tensor::new(&[n], data)?,
            Op::Concat(parts.to_vec()),
        )
    }

    /// Reinterpret a node's data under a new shape with the same element
    /// count. Backward is a pass-through.
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a);
        let expected: usize = shape.iter().product();
        if v.len() != expected {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", v.len()),
                format!("{shape:?} = {expected} elements"),
            ));
        }
        let t = Tensor::new(shape, v.data().to_vec())?;
        self.push_checked("reshape", t, Op::Reshape(a))
    }

    // ---- backward --------------------------------------------------------

    /// Backpropagate from a single-element root node, seeding its gradient
    /// with 1. Gradients of all ancestors (and only ancestors) are then
    /// available through [`Tape::grad`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let seed = Tensor::new(self.nodes[root.0].value.shape(), vec![1.0])
            .map_err(|_| Error::usage("backward root must be a single-element tensor"))?;
        self.backward_seeded(root, &seed)
    }

    /// Backpropagate from `root` with an explicit upstream gradient of the
    /// same shape. Resets all gradients on the tape first; each node is
    /// visited exactly once, in reverse topological (insertion) order.
    pub fn backward_seeded(&mut self, root: NodeId, seed: &Tensor) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::usage(format!(
                "backward root {} out of range for tape of {} nodes",
                root.0,
                self.nodes.len()
            )));
        }
        if seed.shape() != self.nodes[root.0].value.shape() {
            return Err(Error::shape(
                "backward_seeded",
                format!("{:?}", self.nodes[root.0].value.shape()),
                format!("{:?}", seed.shape()),
            ));
        }
        for node in &mut self.nodes {
            node.grad = Tensor::zeros(node.value.shape());
        }
        self.nodes[root.0].grad = seed.clone();

        for i in (0..=root.0).rev() {
            let op = self.nodes[i].op.clone();
            let g = self.nodes[i].grad.clone();
            if g.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            self.apply_backward(i, &op, &g)?;
        }
        self.grads_valid = true;
        Ok(())
    }

    fn add_grad(&mut self, id: NodeId, contrib: &[f64]) {
        let g = self.nodes[id.0].grad.data_mut();
        debug_assert_eq!(g.len(), contrib.len());
        for (gi, ci) in g.iter_mut().zip(contrib) {
            *gi += ci;
        }
    }

    fn apply_backward(&mut self, i: usize, op: &Op, g: &Tensor) -> Result<()> {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2()?;
                let (_, n) = self.nodes[b.0].value.dims2()?;
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                // dA = G * B^T
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    for c in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gd[r * n + j] * bv[c * n + j];
                        }
                        da[r * k + c] = acc;
                    }
                }
                // dB = A^T * G
                let mut db = vec![0.0; k * n];
                for r in 0..m {
                    for c in 0..k {
                        let arc = av[r * k + c];
                        if arc == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[c * n + j] += arc * gd[r * n + j];
                        }
                    }
                }
                self.add_grad(*a, &da);
                self.add_grad(*b, &db);
            }
            Op::Add(a, b) => {
                self.add_grad(*a, gd);
                self.add_grad(*b, gd);
            }
            Op::Sub(a, b) => {
                self.add_grad(*a, gd);
                let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                self.add_grad(*b, &neg);
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                let da: Vec<f64> = gd.iter().zip(&bv).map(|(g, b)| g * b).collect();
                let db: Vec<f64> = gd.iter().zip(&av).map(|(g, a)| g * a).collect();
                self.add_grad(*a, &da);
                self.add_grad(*b, &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = gd.iter().map(|v| v * c).collect();
                self.add_grad(*a, &da);
            }
            Op::Exp(a) => {
                let yv = self.nodes[i].value.data().to_vec();
                let da: Vec<f64> = gd.iter().zip(&yv).map(|(g, y)| g * y).collect();
                self.add_grad(*a, &da);
            }
            Op::Ln(a) => {
                let xv = self.nodes[a.0].value.data().to_vec();
                let da: Vec<f64> = gd.iter().zip(&xv).map(|(g, x)| g / x).collect();
                self.add_grad(*a, &da);
            }
            Op::Abs(a) => {
                let xv = self.nodes[a.0].value.data().to_vec();
                let da: Vec<f64> = gd
                    .iter()
                    .zip(&xv)
                    .map(|(g, x)| {
                        if *x > 0.0 {
                            *g
                        } else if *x < 0.0 {
                            -*g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.add_grad(*a, &da);
            }
            Op::Tanh(a) => {
                let yv = self.nodes[i].value.data().to_vec();
                let da: Vec<f64> = gd.iter().zip(&yv).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.add_grad(*a, &da);
            }
            Op::Sigmoid(a) => {
                let yv = self.nodes[i].value.data().to_vec();
                let da: Vec<f64> = gd.iter().zip(&yv).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.add_grad(*a, &da);
            }
            Op::Sum(a) => {
                let da = vec![gd[0]; self.nodes[a.0].value.len()];
                self.add_grad(*a, &da);
            }
            Op::MeanPoolRows(a) => {
                let (n, d) = self.nodes[a.0].value.dims2()?;
                let mut da = vec![0.0; n * d];
                for r in 0..n {
                    for c in 0..d {
                        da[r * d + c] = gd[c] / n as f64;
                    }
                }
                self.add_grad(*a, &da);
            }
            Op::Softmax { x, tau } => {
                // y = softmax(x / tau): dx_i = (y_i / tau) * (g_i - sum_j g_j y_j)
                let yv = self.nodes[i].value.data().to_vec();
                let dot: f64 = gd.iter().zip(&yv).map(|(g, y)| g * y).sum();
                let da: Vec<f64> = gd
                    .iter()
                    .zip(&yv)
                    .map(|(g, y)| y * (g - dot) / tau)
                    .collect();
                self.add_grad(*x, &da);
            }
            Op::LogSoftmax { x, tau } => {
                // y = x/tau - lse(x/tau): dx_i = (g_i - softmax_i * sum_j g_j) / tau
                let yv = self.nodes[i].value.data().to_vec();
                let gsum: f64 = gd.iter().sum();
                let da: Vec<f64> = gd
                    .iter()
                    .zip(&yv)
                    .map(|(g, y)| (g - y.exp() * gsum) / tau)
                    .collect();
                self.add_grad(*x, &da);
            }
            Op::StopGrad(_) => {}
            Op::AddBiasRows { x, b } => {
                let (n, d) = self.nodes[x.0].value.dims2()?;
                self.add_grad(*x, gd);
                let mut db = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        db[c] += gd[r * d + c];
                    }
                }
                self.add_grad(*b, &db);
            }
            Op::ScaleRows { x, s } => {
                let (n, d) = self.nodes[x.0].value.dims2()?;
                let xv = self.nodes[x.0].value.data().to_vec();
                let sv = self.nodes[s.0].value.data().to_vec();
                let mut dx = vec![0.0; n * d];
                let mut ds = vec![0.0; n];
                for r in 0..n {
                    for c in 0..d {
                        dx[r * d + c] = gd[r * d + c] * sv[r];
                        ds[r] += gd[r * d + c] * xv[r * d + c];
                    }
                }
                self.add_grad(*x, &dx);
                self.add_grad(*s, &ds);
            }
            Op::ScaleByScalar { x, s } => {
                let xv = self.nodes[x.0].value.data().to_vec();
                let sv = self.nodes[s.0].value.item()?;
                let dx: Vec<f64> = gd.iter().map(|g| g * sv).collect();
                let ds: f64 = gd.iter().zip(&xv).map(|(g, x)| g * x).sum();
                self.add_grad(*x, &dx);
                self.add_grad(*s, &[ds]);
            }
            Op::DivByScalar { x, s } => {
                let xv = self.nodes[x.0].value.data().to_vec();
                let sv = self.nodes[s.0].value.item()?;
                let dx: Vec<f64> = gd.iter().map(|g| g / sv).collect();
                let ds: f64 = -gd.iter().zip(&xv).map(|(g, x)| g * x).sum::<f64>() / (sv * sv);
                self.add_grad(*x, &dx);
                self.add_grad(*s, &[ds]);
            }
            Op::GatherRows { x, idx } => {
                let (n, d) = self.nodes[x.0].value.dims2()?;
                let mut dx = vec![0.0; n * d];
                for (out_row, &src_row) in idx.iter().enumerate() {
                    for c in 0..d {
                        dx[src_row * d + c] += gd[out_row * d + c];
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::Gather { x, idx } => {
                let n = self.nodes[x.0].value.len();
                let mut dx = vec![0.0; n];
                for (out_i, &src_i) in idx.iter().enumerate() {
                    dx[src_i] += gd[out_i];
                }
                self.add_grad(*x, &dx);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    let slice = gd[offset..offset + len].to_vec();
                    self.add_grad(p, &slice);
                    offset += len;
                }
            }
            Op::Reshape(a) => {
                self.add_grad(*a, gd);
            }
        }
        Ok(())
    }
}

fn check_tau(op: &str, tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::hyper(
            &format!("{op}.tau"),
            tau,
            "must be finite and > 0",
        ));
    }
    Ok(())
}

/// Max-shifted temperature softmax on plain values (shared by the tape op
/// and by value-level callers that need the same bit-for-bit results).
pub(crate) fn softmax_values(x: &[f64], tau: f64) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| ((v - m) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape, v: &[f64]) -> NodeId {
        tape.leaf(Tensor::vector(v).unwrap())
    }

    #[test]
    fn softmax_unit_simplex_example() {
        // softmax([1,0,0], tau=1) = [e, 1, 1] / (e + 2), computed directly.
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 0.0, 0.0]);
        let y = tape.softmax(x, 1.0).unwrap();
        let e = std::f64::consts::E;
        let expected = [e / (e + 2.0), 1.0 / (e + 2.0), 1.0 / (e + 2.0)];
        for (got, want) in tape.value(y).data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_extreme_inputs_stay_finite() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[-700.0, 0.0]);
        let y = tape.softmax(x, 1.0).unwrap();
        assert!(tape.value(y).all_finite());
        let s: f64 = tape.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let mut tape = Tape::new();
        for tau in [0.25, 1.0, 3.0] {
            let x = vec_leaf(&mut tape, &[-2.0, 0.5, 3.0, 3.0, -700.0]);
            let ls = tape.log_softmax(x, tau).unwrap();
            let sm = tape.softmax(x, tau).unwrap();
            for (l, s) in tape
                .value(ls)
                .data()
                .iter()
                .zip(tape.value(sm).data())
            {
                assert!((l.exp() - s).abs() < 1e-12, "exp({l}) vs {s} at tau={tau}");
            }
        }
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        assert!(tape.softmax(x, 0.0).is_err());
        assert!(tape.softmax(x, -1.0).is_err());
        assert!(tape.log_softmax(x, f64::NAN).is_err());
    }

    #[test]
    fn grad_before_backward_is_usage_error() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0]);
        let err = tape.grad(x).unwrap_err();
        assert!(err.to_string().contains("backward"), "{err}");
    }

    #[test]
    fn adding_nodes_invalidates_gradients() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[2.0]);
        let y = tape.scale(x, 3.0).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[3.0]);
        let _z = tape.scale(y, 1.0).unwrap();
        assert!(tape.grad(x).is_err());
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[4, 5]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('4'), "{msg}");
    }

    #[test]
    fn ln_of_nonpositive_is_error_naming_op() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 0.0]);
        let err = tape.ln(x).unwrap_err();
        assert!(err.to_string().contains("ln"), "{err}");
    }

    #[test]
    fn stopgrad_blocks_gradient() {
        // loss = x * stopgrad(x): d loss/dx = stopgrad(x) = value of x only.
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[3.0]);
        let sg = tape.stopgrad(x).unwrap();
        let prod = tape.mul(x, sg).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // Diamond: y = exp(x), z = 2x, loss = sum(y * z).
        // d/dx = exp(x) * (2 + 2x) at x = 0.5.
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.5]);
        let y = tape.exp(x).unwrap();
        let z = tape.scale(x, 2.0).unwrap();
        let prod = tape.mul(y, z).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap();
        let expected = 0.5f64.exp() * 3.0;
        let got = tape.grad(x).unwrap().data()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn backward_root_must_be_scalar() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn gather_rows_rejects_out_of_range() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3, 2]));
        let err = tape.gather_rows(x, &[0, 3]).unwrap_err();
        assert!(err.to_string().contains('3'), "{err}");
    }
}
