use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernels;
use crate::{NumericError, ParameterStore, Result, Shape, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    ClampMin(Var, f64),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Vec<f64>, inv_std: Vec<f64> },
    Mask(Var, Vec<f64>),
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    CumsumRows(Var),
    Select(Var, usize),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddRow(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _) | AddScalar(a) | Relu(a) | Sigmoid(a) | Tanh(a) | Softplus(a) | Exp(a)
            | Log(a) | Abs(a) | ClampMin(a, _) | Softmax(a) | Mask(a, _) | Sum(a)
            | Transpose(a) | Reshape(a) | SliceCols(a, _) | SliceRows(a, _)
            | GatherRows(a, _) | CumsumRows(a) | Select(a, _) => vec![*a],
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            ConcatCols(vs) | ConcatRows(vs) => vs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Epsilon added to the variance in [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A single-use computation tape.
///
/// Nodes are appended in evaluation order, so every input of a node has a
/// smaller index than the node itself and the reverse sweep in
/// [`Graph::backward`] is a plain reverse iteration.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<String, Var>,
    training: bool,
    rng: ChaCha8Rng,
    relu_margin: f64,
}

impl Graph {
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            relu_margin: f64::INFINITY,
        }
    }

    /// Inference graph: dropout disabled, no randomness consumed.
    pub fn eval() -> Self {
        Self::new(false, 0)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest `|x|` seen by any ReLU so far. Finite-difference probes with
    /// a step well below this value never cross a kink.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push_checked("constant", t, Op::Leaf, false)
    }

    /// Binds a named parameter from `store`. Repeated calls with the same
    /// name return the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| NumericError::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.push_checked("param", t, Op::Leaf, true)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// Gradient of every bound parameter that received one.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                let t = Tensor::from_shape(self.shape(v), g.to_vec()).expect("grad shape");
                out.insert(name.clone(), t);
            }
        }
        out
    }

    pub fn bound_params(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, name: &'static str, shape: Shape, data: Vec<f64>, op: Op) -> Result<Var> {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::from_shape(shape, data)?;
        self.push_checked(name, value, op, requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NumericError::ShapeMismatch { op, detail: format!("{sa} vs {sb}") });
        }
        Ok(sa)
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let shape = self.shape(a);
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        self.push(name, shape, data, op)
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let shape = self.same_shape(name, a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        self.push(name, shape, data, op)
    }

    /// Matrix product of two rank-2 values.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rank() != 2 || sb.rank() != 2 || sa.cols() != sb.rows() {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa} x {sb}"),
            });
        }
        let (m, k, n) = (sa.rows(), sa.cols(), sb.cols());
        let data = kernels::matmul(self.data(a), self.data(b), m, k, n);
        self.push("matmul", Shape::matrix(m, n)?, data, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Adds `bias` (any shape with `cols(a)` elements) to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.numel() != sa.cols() {
            return Err(NumericError::ShapeMismatch {
                op: "add_row",
                detail: format!("bias {sb} for input {sa}"),
            });
        }
        let cols = sa.cols();
        let b = self.data(bias);
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[i % cols])
            .collect();
        self.push("add_row", sa, data, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let margin = self.data(a).iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
        self.relu_margin = self.relu_margin.min(margin);
        self.map("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map("softplus", a, kernels::softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map("log", a, f64::ln, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map("abs", a, f64::abs, Op::Abs(a))
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.map("clamp_min", a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    /// Softmax along the last axis, stabilised by max-subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let cols = shape.cols();
        let src = self.data(a);
        if !src.iter().all(|v| v.is_finite()) {
            return Err(NumericError::NonFinite { op: "softmax" });
        }
        let mut data = vec![0.0; src.len()];
        for (x, o) in src.chunks(cols).zip(data.chunks_mut(cols)) {
            kernels::softmax_row(x, o);
        }
        self.push("softmax", shape, data, Op::Softmax(a))
    }

    /// Normalises the last axis to zero mean and unit population variance,
    /// then applies `gain` and `bias` (each with `cols` elements).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x);
        let cols = shape.cols();
        if cols < 2 {
            return Err(NumericError::InvalidArgument {
                op: "layer_norm",
                detail: "last axis must have at least 2 entries".into(),
            });
        }
        if self.shape(gain).numel() != cols || self.shape(bias).numel() != cols {
            return Err(NumericError::ShapeMismatch {
                op: "layer_norm",
                detail: format!("gain/bias must have {cols} entries"),
            });
        }
        let src = self.data(x);
        let (g, b) = (self.data(gain), self.data(bias));
        let mut normed = vec![0.0; src.len()];
        let mut inv_std = Vec::with_capacity(shape.rows());
        let mut out = vec![0.0; src.len()];
        for (r, row) in src.chunks(cols).enumerate() {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..cols {
                let n = (row[j] - mean) * is;
                normed[r * cols + j] = n;
                out[r * cols + j] = n * g[j] + b[j];
            }
        }
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gain, bias, normed, inv_std })
    }

    /// Inverted dropout. Identity when `rate == 0` or the graph is not in
    /// training mode.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericError::InvalidArgument {
                op: "dropout",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !self.training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.shape(a).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self.data(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(a);
        self.push("dropout", shape, data, Op::Mask(a, mask))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        self.push("sum", Shape::scalar(), vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.rank() != 2 {
            return Err(NumericError::ShapeMismatch { op: "transpose", detail: format!("rank of {s}") });
        }
        let (m, n) = (s.rows(), s.cols());
        let src = self.data(a);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        self.push("transpose", Shape::matrix(n, m)?, data, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.shape(a).numel() {
            return Err(NumericError::ShapeMismatch {
                op: "reshape",
                detail: format!("{} to {shape}", self.shape(a)),
            });
        }
        let data = self.data(a).to_vec();
        self.push("reshape", shape, data, Op::Reshape(a))
    }

    /// Columns `start..start + len` of a matrix view of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if len == 0 || start + len > s.cols() {
            return Err(NumericError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("{start}+{len} of {s}"),
            });
        }
        let cols = s.cols();
        let data = self
            .data(a)
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        self.push("slice_cols", Shape::matrix(s.rows(), len)?, data, Op::SliceCols(a, start))
    }

    /// Rows `start..start + len` of a matrix view of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if len == 0 || start + len > s.rows() {
            return Err(NumericError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("{start}+{len} of {s}"),
            });
        }
        let cols = s.cols();
        let data = self.data(a)[start * cols..(start + len) * cols].to_vec();
        self.push("slice_rows", Shape::matrix(len, cols)?, data, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p).rows()).ok_or(NumericError::InvalidArgument {
            op: "concat_cols",
            detail: "no inputs".into(),
        })?;
        if parts.iter().any(|&p| self.shape(p).rows() != rows) {
            return Err(NumericError::ShapeMismatch { op: "concat_cols", detail: "row counts differ".into() });
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        self.push("concat_cols", Shape::matrix(rows, total)?, data, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.shape(p).cols()).ok_or(NumericError::InvalidArgument {
            op: "concat_rows",
            detail: "no inputs".into(),
        })?;
        if parts.iter().any(|&p| self.shape(p).cols() != cols) {
            return Err(NumericError::ShapeMismatch { op: "concat_rows", detail: "column counts differ".into() });
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.data(p));
        }
        let rows = data.len() / cols;
        self.push("concat_rows", Shape::matrix(rows, cols)?, data, Op::ConcatRows(parts.to_vec()))
    }

    /// Rows of `a` at `indices`, in that order.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if indices.is_empty() || indices.iter().any(|&i| i >= s.rows()) {
            return Err(NumericError::InvalidArgument {
                op: "gather_rows",
                detail: format!("indices {indices:?} for {s}"),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * s.cols());
        for &i in indices {
            data.extend_from_slice(self.value(a).row_slice(i));
        }
        self.push("gather_rows", Shape::matrix(indices.len(), s.cols())?, data, Op::GatherRows(a, indices.to_vec()))
    }

    /// Running sum down the rows: `out[r] = a[0] + ... + a[r]`.
    pub fn cumsum_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let cols = s.cols();
        let mut data = self.data(a).to_vec();
        for r in 1..s.rows() {
            for j in 0..cols {
                data[r * cols + j] += data[(r - 1) * cols + j];
            }
        }
        self.push("cumsum_rows", s, data, Op::CumsumRows(a))
    }

    /// Single element at flat `index`, as a scalar.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let n = self.shape(a).numel();
        if index >= n {
            return Err(NumericError::InvalidArgument { op: "select", detail: format!("{index} >= {n}") });
        }
        let v = self.data(a)[index];
        self.push("select", Shape::scalar(), vec![v], Op::Select(a, index))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively,
    /// so calling `backward` twice on the same tape doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(NumericError::NonScalarLoss(shape));
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        accumulate(&mut self.grads, loss, 1)[0] += 1.0;
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || grads[idx].is_none() || matches!(node.op, Op::Leaf) {
                continue;
            }
            for input in node.op.inputs() {
                if input.0 >= idx {
                    return Err(NumericError::Cycle(idx));
                }
            }
            let g = grads[idx].take().expect("checked above");
            backprop_node(nodes, grads, idx, &g);
            grads[idx] = Some(g);
        }
        Ok(())
    }

    /// Clears all gradient buffers.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], idx: usize, g: &[f64]) {
    let node = &nodes[idx];
    let out = node.value.data();
    let needs = |v: Var| nodes[v.0].requires_grad;
    let val = |v: Var| nodes[v.0].value.data();
    let numel = |v: Var| nodes[v.0].value.numel();
    macro_rules! acc {
        ($v:expr) => {
            accumulate(grads, $v, numel($v))
        };
    }
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
            let (m, k, n) = (sa.rows(), sa.cols(), sb.cols());
            if needs(*a) {
                kernels::matmul_nt_acc(acc!(*a), g, val(*b), m, k, n);
            }
            if needs(*b) {
                kernels::matmul_tn_acc(acc!(*b), val(*a), g, m, k, n);
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if needs(v) {
                    acc!(v).iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                acc!(*a).iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
            }
            if needs(*b) {
                acc!(*b).iter_mut().zip(g).for_each(|(d, gi)| *d -= gi);
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let bv = val(*b);
                acc!(*a).iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * bv[i]);
            }
            if needs(*b) {
                let av = val(*a);
                acc!(*b).iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * av[i]);
            }
        }
        Op::Div(a, b) => {
            let bv = val(*b);
            if needs(*a) {
                acc!(*a).iter_mut().enumerate().for_each(|(i, d)| *d += g[i] / bv[i]);
            }
            if needs(*b) {
                let av = val(*a);
                acc!(*b)
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, d)| *d -= g[i] * av[i] / (bv[i] * bv[i]));
            }
        }
        Op::AddRow(a, bias) => {
            if needs(*a) {
                acc!(*a).iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
            }
            if needs(*bias) {
                let cols = numel(*bias);
                let db = acc!(*bias);
                for (i, gi) in g.iter().enumerate() {
                    db[i % cols] += gi;
                }
            }
        }
        Op::Scale(a, c) => {
            acc!(*a).iter_mut().zip(g).for_each(|(d, gi)| *d += gi * c);
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            acc!(*a).iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
        }
        Op::Relu(a) => {
            let av = val(*a);
            acc!(*a).iter_mut().enumerate().for_each(|(i, d)| {
                if av[i] > 0.0 {
                    *d += g[i]
                }
            });
        }
        Op::Sigmoid(a) => {
            acc!(*a).iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * out[i] * (1.0 - out[i]));
        }
        Op::Tanh(a) => {
            acc!(*a).iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * (1.0 - out[i] * out[i]));
        }
        Op::Softplus(a) => {
            let av = val(*a);
            acc!(*a)
                .iter_mut()
                .enumerate()
                .for_each(|(i, d)| *d += g[i] * kernels::sigmoid(av[i]));
        }
        Op::Exp(a) => {
            acc!(*a).iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * out[i]);
        }
        Op::Log(a) => {
            let av = val(*a);
            acc!(*a).iter_mut().enumerate().for_each(|(i, d)| *d += g[i] / av[i]);
        }
        Op::Abs(a) => {
            let av = val(*a);
            acc!(*a).iter_mut().enumerate().for_each(|(i, d)| {
                if av[i] > 0.0 {
                    *d += g[i]
                } else if av[i] < 0.0 {
                    *d -= g[i]
                }
            });
        }
        Op::ClampMin(a, floor) => {
            let av = val(*a);
            acc!(*a).iter_mut().enumerate().for_each(|(i, d)| {
                if av[i] > *floor {
                    *d += g[i]
                }
            });
        }
        Op::Softmax(a) => {
            let cols = node.value.cols();
            let da = acc!(*a);
            for ((y, gr), d) in out.chunks(cols).zip(g.chunks(cols)).zip(da.chunks_mut(cols)) {
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..cols {
                    d[j] += y[j] * (gr[j] - dot);
                }
            }
        }
        Op::LayerNorm { x, gain, bias, normed, inv_std } => {
            let cols = node.value.cols();
            let gv = val(*gain);
            if needs(*x) {
                let dx = acc!(*x);
                for (r, is) in inv_std.iter().enumerate() {
                    let row = r * cols..(r + 1) * cols;
                    let gn: Vec<f64> = g[row.clone()].iter().zip(gv).map(|(a, b)| a * b).collect();
                    let nr = &normed[row.clone()];
                    let mean_gn = gn.iter().sum::<f64>() / cols as f64;
                    let mean_gnn = gn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for j in 0..cols {
                        dx[r * cols + j] += is * (gn[j] - mean_gn - nr[j] * mean_gnn);
                    }
                }
            }
            if needs(*gain) {
                let dg = acc!(*gain);
                for (i, gi) in g.iter().enumerate() {
                    dg[i % cols] += gi * normed[i];
                }
            }
            if needs(*bias) {
                let db = acc!(*bias);
                for (i, gi) in g.iter().enumerate() {
                    db[i % cols] += gi;
                }
            }
        }
        Op::Mask(a, mask) => {
            acc!(*a).iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * mask[i]);
        }
        Op::Sum(a) => {
            let gs = g[0];
            acc!(*a).iter_mut().for_each(|d| *d += gs);
        }
        Op::Transpose(a) => {
            let s = nodes[a.0].value.shape();
            let (m, n) = (s.rows(), s.cols());
            let da = acc!(*a);
            for i in 0..m {
                for j in 0..n {
                    da[i * n + j] += g[j * m + i];
                }
            }
        }
        Op::SliceCols(a, start) => {
            let src_cols = nodes[a.0].value.cols();
            let len = node.value.cols();
            let da = acc!(*a);
            for (r, gr) in g.chunks(len).enumerate() {
                for (j, gi) in gr.iter().enumerate() {
                    da[r * src_cols + start + j] += gi;
                }
            }
        }
        Op::SliceRows(a, start) => {
            let cols = node.value.cols();
            let da = acc!(*a);
            for (i, gi) in g.iter().enumerate() {
                da[start * cols + i] += gi;
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p.0].value.cols();
                if needs(p) {
                    let dp = acc!(p);
                    for (r, gr) in g.chunks(total).enumerate() {
                        for j in 0..w {
                            dp[r * w + j] += gr[offset + j];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = numel(p);
                if needs(p) {
                    acc!(p).iter_mut().zip(&g[offset..offset + n]).for_each(|(d, gi)| *d += gi);
                }
                offset += n;
            }
        }
        Op::GatherRows(a, indices) => {
            let cols = node.value.cols();
            let da = acc!(*a);
            for (k, &i) in indices.iter().enumerate() {
                for j in 0..cols {
                    da[i * cols + j] += g[k * cols + j];
                }
            }
        }
        Op::CumsumRows(a) => {
            let s = node.value.shape();
            let (rows, cols) = (s.rows(), s.cols());
            let da = acc!(*a);
            let mut running = vec![0.0; cols];
            for r in (0..rows).rev() {
                for j in 0..cols {
                    running[j] += g[r * cols + j];
                    da[r * cols + j] += running[j];
                }
            }
        }
        Op::Select(a, index) => {
            acc!(*a)[*index] += g[0];
        }
    }
}
