//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records operations eagerly; [`Tape::backward`] replays them in
//! reverse, visiting each node exactly once. The operator set is exactly
//! what the forecasting models need, including softmax/sum/mean over
//! variable-size index groups for neighbourhood aggregation. Every op
//! traps NaN/Inf in its output.

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::fmath;
use crate::seedstream::{mix64, unit_uniform};

/// Errors raised by tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TapeError {
    ShapeMismatch { op: &'static str, detail: String },
    NonScalarLoss { len: usize },
    InvalidRate(f64),
    NonFinite { op: &'static str },
    IndexOutOfBounds { op: &'static str, index: usize, bound: usize },
}

impl fmt::Display for TapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapeError::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch ({detail})"),
            TapeError::NonScalarLoss { len } => {
                write!(f, "backward requires a scalar loss, got {len} elements")
            }
            TapeError::InvalidRate(r) => write!(f, "dropout rate must be in [0, 1), got {r}"),
            TapeError::NonFinite { op } => write!(f, "{op}: non-finite value in output"),
            TapeError::IndexOutOfBounds { op, index, bound } => {
                write!(f, "{op}: index {index} out of bounds (< {bound})")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TapeError {}

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data length mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![x] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor (1-D tensors count as a single row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a 2-D tensor (length of a 1-D tensor).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Index of a parameter within a [`ParamSet`].
pub type ParamId = usize;

/// Flat collection of model parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.into(), value, grad, trainable: true });
        self.params.len() - 1
    }

    /// Add a non-trainable tensor (dataset statistics and the like) so it
    /// travels with checkpoints.
    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = self.add(name, value);
        self.params[id].trainable = false;
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }
}

enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    MulRow(usize, usize),
    MulScalar(usize, usize),
    ScaleConst(usize, f64),
    AddConst(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { src: usize, start: usize, len: usize },
    Gather { src: usize, indices: Rc<Vec<usize>> },
    SegmentSum { src: usize, groups: Rc<Vec<usize>> },
    SegmentMean { src: usize, groups: Rc<Vec<usize>>, n_groups: usize },
    SegmentSoftmax { src: usize, groups: Rc<Vec<usize>> },
    Gelu(usize),
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Dropout { src: usize, keep: Rc<Vec<bool>>, scale: f64 },
    LayerNorm { src: usize, eps: f64 },
    SumAll(usize),
    Reshape(usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded computation graph for one forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(Var, ParamId)>,
    train_mode: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a recorded var; `None` if the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

const LAYER_NORM_EPS: f64 = 1e-8;

impl Tape {
    pub fn new(train_mode: bool) -> Tape {
        Tape { nodes: Vec::new(), bindings: Vec::new(), train_mode }
    }

    pub fn train_mode(&self) -> bool {
        self.train_mode
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var, TapeError> {
        if !value.all_finite() {
            return Err(TapeError::NonFinite { op: name });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value });
        Var(self.nodes.len() - 1)
    }

    /// Record a parameter leaf; `backward` gradients can later be
    /// accumulated into the owning [`ParamSet`].
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let v = self.constant(params.get(id).value.clone());
        self.bindings.push((v, id));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                detail: alloc::format!("({m}x{k}) x ({k2}x{n})"),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), m, k, n, &mut out);
        self.push(Op::Matmul(a.0, b.0), Tensor::new(&[m, n], out), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Add(a.0, b.0), Tensor { shape, data }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err("sub", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Sub(a.0, b.0), Tensor { shape, data }, "sub")
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Mul(a.0, b.0), Tensor { shape, data }, "mul")
    }

    /// Matrix plus a row vector broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TapeError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let (m, n) = (ta.rows(), ta.cols());
        if tb.len() != n {
            return Err(shape_err("add_bias", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += tb.data()[j];
            }
        }
        let shape = ta.shape().to_vec();
        self.push(Op::AddBias(a.0, bias.0), Tensor { shape, data }, "add_bias")
    }

    /// Matrix times a row vector broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TapeError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        let (m, n) = (ta.rows(), ta.cols());
        if tb.len() != n {
            return Err(shape_err("mul_row", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] *= tb.data()[j];
            }
        }
        let shape = ta.shape().to_vec();
        self.push(Op::MulRow(a.0, row.0), Tensor { shape, data }, "mul_row")
    }

    /// Tensor times a single-element tensor (e.g. a gate parameter).
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, TapeError> {
        let ts = &self.nodes[s.0].value;
        if ts.len() != 1 {
            return Err(TapeError::ShapeMismatch {
                op: "mul_scalar",
                detail: alloc::format!("scalar operand has {} elements", ts.len()),
            });
        }
        let c = ts.data()[0];
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|x| x * c).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::MulScalar(a.0, s.0), Tensor { shape, data }, "mul_scalar")
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Result<Var, TapeError> {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|x| x * c).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::ScaleConst(a.0, c), Tensor { shape, data }, "scale_const")
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var, TapeError> {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|x| x + c).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::AddConst(a.0), Tensor { shape, data }, "add_const")
    }

    /// Concatenate 2-D tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TapeError> {
        let rows = self.nodes[parts[0].0].value.rows();
        let mut total = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows() != rows {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_cols",
                    detail: alloc::format!("row counts differ: {} vs {}", rows, t.rows()),
                });
            }
            total += t.cols();
        }
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            let c = t.cols();
            for i in 0..rows {
                data[i * total + off..i * total + off + c]
                    .copy_from_slice(&t.data()[i * c..(i + 1) * c]);
            }
            off += c;
        }
        self.push(
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            Tensor::new(&[rows, total], data),
            "concat_cols",
        )
    }

    /// Concatenate 2-D tensors along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TapeError> {
        let cols = self.nodes[parts[0].0].value.cols();
        let mut total = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.cols() != cols {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_rows",
                    detail: alloc::format!("column counts differ: {} vs {}", cols, t.cols()),
                });
            }
            total += t.rows();
        }
        let mut data = Vec::with_capacity(total * cols);
        for p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        self.push(
            Op::ConcatRows(parts.iter().map(|p| p.0).collect()),
            Tensor::new(&[total, cols], data),
            "concat_rows",
        )
    }

    /// Column slice `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TapeError> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = (ta.rows(), ta.cols());
        if start + len > n {
            return Err(TapeError::IndexOutOfBounds { op: "slice_cols", index: start + len, bound: n });
        }
        let mut data = vec![0.0; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&ta.data()[i * n + start..i * n + start + len]);
        }
        self.push(Op::SliceCols { src: a.0, start, len }, Tensor::new(&[m, len], data), "slice_cols")
    }

    /// Select rows of a 2-D tensor by index (duplicates allowed).
    pub fn gather(&mut self, a: Var, indices: Rc<Vec<usize>>) -> Result<Var, TapeError> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = (ta.rows(), ta.cols());
        for &i in indices.iter() {
            if i >= m {
                return Err(TapeError::IndexOutOfBounds { op: "gather", index: i, bound: m });
            }
        }
        let mut data = vec![0.0; indices.len() * n];
        for (r, &i) in indices.iter().enumerate() {
            data[r * n..(r + 1) * n].copy_from_slice(&ta.data()[i * n..(i + 1) * n]);
        }
        let rows = indices.len();
        self.push(Op::Gather { src: a.0, indices }, Tensor::new(&[rows, n], data), "gather")
    }

    fn check_groups(
        &self,
        op: &'static str,
        a: Var,
        groups: &[usize],
        n_groups: usize,
    ) -> Result<(usize, usize), TapeError> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = (ta.rows(), ta.cols());
        if groups.len() != m {
            return Err(TapeError::ShapeMismatch {
                op,
                detail: alloc::format!("{} group ids for {m} rows", groups.len()),
            });
        }
        for &g in groups {
            if g >= n_groups {
                return Err(TapeError::IndexOutOfBounds { op, index: g, bound: n_groups });
            }
        }
        Ok((m, n))
    }

    /// Sum rows into their group: output is `(n_groups x cols)`.
    pub fn segment_sum(
        &mut self,
        a: Var,
        groups: Rc<Vec<usize>>,
        n_groups: usize,
    ) -> Result<Var, TapeError> {
        let (m, n) = self.check_groups("segment_sum", a, &groups, n_groups)?;
        let ta = &self.nodes[a.0].value;
        let mut data = vec![0.0; n_groups * n];
        for r in 0..m {
            let g = groups[r];
            for j in 0..n {
                data[g * n + j] += ta.data()[r * n + j];
            }
        }
        self.push(
            Op::SegmentSum { src: a.0, groups },
            Tensor::new(&[n_groups, n], data),
            "segment_sum",
        )
    }

    /// Mean of rows per group; empty groups yield a zero row.
    pub fn segment_mean(
        &mut self,
        a: Var,
        groups: Rc<Vec<usize>>,
        n_groups: usize,
    ) -> Result<Var, TapeError> {
        let (m, n) = self.check_groups("segment_mean", a, &groups, n_groups)?;
        let ta = &self.nodes[a.0].value;
        let mut counts = vec![0usize; n_groups];
        for &g in groups.iter() {
            counts[g] += 1;
        }
        let mut data = vec![0.0; n_groups * n];
        for r in 0..m {
            let g = groups[r];
            for j in 0..n {
                data[g * n + j] += ta.data()[r * n + j];
            }
        }
        for g in 0..n_groups {
            if counts[g] > 0 {
                let inv = 1.0 / counts[g] as f64;
                for j in 0..n {
                    data[g * n + j] *= inv;
                }
            }
        }
        self.push(
            Op::SegmentMean { src: a.0, groups, n_groups },
            Tensor::new(&[n_groups, n], data),
            "segment_mean",
        )
    }

    /// Column-wise softmax within each row group; output has the input
    /// shape. Numerically stabilized by the per-group maximum.
    pub fn segment_softmax(&mut self, a: Var, groups: Rc<Vec<usize>>) -> Result<Var, TapeError> {
        let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
        let (m, n) = self.check_groups("segment_softmax", a, &groups, n_groups.max(1))?;
        let ta = &self.nodes[a.0].value;
        let mut maxes = vec![f64::NEG_INFINITY; n_groups * n];
        for r in 0..m {
            let g = groups[r];
            for j in 0..n {
                let v = ta.data()[r * n + j];
                if v > maxes[g * n + j] {
                    maxes[g * n + j] = v;
                }
            }
        }
        let mut sums = vec![0.0; n_groups * n];
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            let g = groups[r];
            for j in 0..n {
                let e = fmath::exp(ta.data()[r * n + j] - maxes[g * n + j]);
                data[r * n + j] = e;
                sums[g * n + j] += e;
            }
        }
        for r in 0..m {
            let g = groups[r];
            for j in 0..n {
                data[r * n + j] /= sums[g * n + j];
            }
        }
        let shape = ta.shape().to_vec();
        self.push(Op::SegmentSoftmax { src: a.0, groups }, Tensor { shape, data }, "segment_softmax")
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, TapeError> {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|&x| gelu_value(x)).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Gelu(a.0), Tensor { shape, data }, "gelu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TapeError> {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|&x| 1.0 / (1.0 + fmath::exp(-x))).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Sigmoid(a.0), Tensor { shape, data }, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TapeError> {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|&x| fmath::tanh(x)).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Tanh(a.0), Tensor { shape, data }, "tanh")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, TapeError> {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|&x| if x >= 0.0 { x } else { slope * x }).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::LeakyRelu(a.0, slope), Tensor { shape, data }, "leaky_relu")
    }

    /// Inverted dropout: in training mode survivors scale by 1/(1-rate);
    /// in evaluation mode this is the identity.
    pub fn dropout(&mut self, a: Var, rate: f64, seed: u64) -> Result<Var, TapeError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TapeError::InvalidRate(rate));
        }
        if !self.train_mode || rate == 0.0 {
            return Ok(a);
        }
        let ta = &self.nodes[a.0].value;
        let keep: Vec<bool> = (0..ta.len())
            .map(|i| unit_uniform(mix64(seed ^ mix64(i as u64))) >= rate)
            .collect();
        let scale = 1.0 / (1.0 - rate);
        let data = ta
            .data()
            .iter()
            .zip(&keep)
            .map(|(&x, &k)| if k { x * scale } else { 0.0 })
            .collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Dropout { src: a.0, keep: Rc::new(keep), scale }, Tensor { shape, data }, "dropout")
    }

    /// Row-wise normalization to zero mean, unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var, TapeError> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &ta.data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / fmath::sqrt(var + LAYER_NORM_EPS);
            for j in 0..n {
                data[i * n + j] = (row[j] - mean) * inv;
            }
        }
        let shape = ta.shape().to_vec();
        self.push(Op::LayerNorm { src: a.0, eps: LAYER_NORM_EPS }, Tensor { shape, data }, "layer_norm")
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var, TapeError> {
        let s = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::SumAll(a.0), Tensor::scalar(s), "sum_all")
    }

    /// Reinterpret the element buffer with a new shape of the same size.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TapeError> {
        let ta = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != ta.len() {
            return Err(TapeError::ShapeMismatch {
                op: "reshape",
                detail: alloc::format!("{} elements into shape {:?}", ta.len(), shape),
            });
        }
        let t = Tensor { shape: shape.to_vec(), data: ta.data().to_vec() };
        self.push(Op::Reshape(a.0), t, "reshape")
    }

    /// Reverse sweep from a scalar loss; returns per-var gradients.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TapeError> {
        let llen = self.nodes[loss.0].value.len();
        if llen != 1 {
            return Err(TapeError::NonScalarLoss { len: llen });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Add `scale` times the recorded parameter gradients into the set.
    pub fn accumulate_param_grads(&self, grads: &Gradients, params: &mut ParamSet, scale: f64) {
        for &(var, id) in &self.bindings {
            if let Some(g) = grads.wrt(var) {
                let p = params.get_mut(id);
                for (acc, gv) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += scale * gv;
                }
            }
        }
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_to = |grads: &mut [Option<Tensor>], target: usize, contrib: &dyn Fn(&mut Tensor)| {
            let slot = &mut grads[target];
            if slot.is_none() {
                *slot = Some(Tensor::zeros(self.nodes[target].value.shape()));
            }
            contrib(slot.as_mut().unwrap());
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                add_to(grads, *a, &|ga: &mut Tensor| {
                    // dA = dC · B^T
                    let gd = ga.data_mut();
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            let grow = &g.data()[i * n..(i + 1) * n];
                            let brow = &tb.data()[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                acc += grow[j] * brow[j];
                            }
                            gd[i * k + kk] += acc;
                        }
                    }
                });
                add_to(grads, *b, &|gb: &mut Tensor| {
                    // dB = A^T · dC
                    let gd = gb.data_mut();
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let av = ta.data()[i * k + kk];
                            if av != 0.0 {
                                let brow = &mut gd[kk * n..(kk + 1) * n];
                                for j in 0..n {
                                    brow[j] += av * grow[j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for t in [*a, *b] {
                    add_to(grads, t, &|gt: &mut Tensor| {
                        for (o, gv) in gt.data_mut().iter_mut().zip(g.data()) {
                            *o += gv;
                        }
                    });
                }
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for (o, gv) in gt.data_mut().iter_mut().zip(g.data()) {
                        *o += gv;
                    }
                });
                add_to(grads, *b, &|gt: &mut Tensor| {
                    for (o, gv) in gt.data_mut().iter_mut().zip(g.data()) {
                        *o -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for i in 0..g.len() {
                        gt.data_mut()[i] += g.data()[i] * tb.data()[i];
                    }
                });
                add_to(grads, *b, &|gt: &mut Tensor| {
                    for i in 0..g.len() {
                        gt.data_mut()[i] += g.data()[i] * ta.data()[i];
                    }
                });
            }
            Op::AddBias(a, b) => {
                let n = self.nodes[*b].value.len();
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for (o, gv) in gt.data_mut().iter_mut().zip(g.data()) {
                        *o += gv;
                    }
                });
                add_to(grads, *b, &|gt: &mut Tensor| {
                    for (i, gv) in g.data().iter().enumerate() {
                        gt.data_mut()[i % n] += gv;
                    }
                });
            }
            Op::MulRow(a, b) => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let n = tb.len();
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for (i, gv) in g.data().iter().enumerate() {
                        gt.data_mut()[i] += gv * tb.data()[i % n];
                    }
                });
                add_to(grads, *b, &|gt: &mut Tensor| {
                    for (i, gv) in g.data().iter().enumerate() {
                        gt.data_mut()[i % n] += gv * ta.data()[i];
                    }
                });
            }
            Op::MulScalar(a, s) => {
                let ta = &self.nodes[*a].value;
                let c = self.nodes[*s].value.data()[0];
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for (o, gv) in gt.data_mut().iter_mut().zip(g.data()) {
                        *o += gv * c;
                    }
                });
                add_to(grads, *s, &|gt: &mut Tensor| {
                    let mut acc = 0.0;
                    for (gv, xv) in g.data().iter().zip(ta.data()) {
                        acc += gv * xv;
                    }
                    gt.data_mut()[0] += acc;
                });
            }
            Op::ScaleConst(a, c) => {
                let c = *c;
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for (o, gv) in gt.data_mut().iter_mut().zip(g.data()) {
                        *o += gv * c;
                    }
                });
            }
            Op::AddConst(a) => {
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for (o, gv) in gt.data_mut().iter_mut().zip(g.data()) {
                        *o += gv;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = self.nodes[id].value.rows();
                let total = self.nodes[id].value.cols();
                let mut off = 0;
                for p in parts {
                    let c = self.nodes[*p].value.cols();
                    let off_now = off;
                    add_to(grads, *p, &|gt: &mut Tensor| {
                        for i in 0..rows {
                            for j in 0..c {
                                gt.data_mut()[i * c + j] += g.data()[i * total + off_now + j];
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let r = self.nodes[*p].value.rows();
                    let c = self.nodes[*p].value.cols();
                    let off_now = off;
                    add_to(grads, *p, &|gt: &mut Tensor| {
                        for i in 0..r * c {
                            gt.data_mut()[i] += g.data()[off_now * c + i];
                        }
                    });
                    off += r;
                }
            }
            Op::SliceCols { src, start, len } => {
                let n = self.nodes[*src].value.cols();
                let m = self.nodes[*src].value.rows();
                add_to(grads, *src, &|gt: &mut Tensor| {
                    for i in 0..m {
                        for j in 0..*len {
                            gt.data_mut()[i * n + start + j] += g.data()[i * len + j];
                        }
                    }
                });
            }
            Op::Gather { src, indices } => {
                let n = self.nodes[*src].value.cols();
                add_to(grads, *src, &|gt: &mut Tensor| {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..n {
                            gt.data_mut()[i * n + j] += g.data()[r * n + j];
                        }
                    }
                });
            }
            Op::SegmentSum { src, groups } => {
                let n = self.nodes[*src].value.cols();
                add_to(grads, *src, &|gt: &mut Tensor| {
                    for (r, &grp) in groups.iter().enumerate() {
                        for j in 0..n {
                            gt.data_mut()[r * n + j] += g.data()[grp * n + j];
                        }
                    }
                });
            }
            Op::SegmentMean { src, groups, n_groups } => {
                let n = self.nodes[*src].value.cols();
                let mut counts = vec![0usize; *n_groups];
                for &grp in groups.iter() {
                    counts[grp] += 1;
                }
                add_to(grads, *src, &|gt: &mut Tensor| {
                    for (r, &grp) in groups.iter().enumerate() {
                        let inv = 1.0 / counts[grp] as f64;
                        for j in 0..n {
                            gt.data_mut()[r * n + j] += g.data()[grp * n + j] * inv;
                        }
                    }
                });
            }
            Op::SegmentSoftmax { src, groups } => {
                let y = &self.nodes[id].value;
                let n = y.cols();
                let n_groups = groups.iter().copied().max().map_or(0, |x| x + 1);
                // per (group, column): Σ y·g over member rows
                let mut dot = vec![0.0; n_groups * n];
                for (r, &grp) in groups.iter().enumerate() {
                    for j in 0..n {
                        dot[grp * n + j] += y.data()[r * n + j] * g.data()[r * n + j];
                    }
                }
                add_to(grads, *src, &|gt: &mut Tensor| {
                    for (r, &grp) in groups.iter().enumerate() {
                        for j in 0..n {
                            let yv = y.data()[r * n + j];
                            gt.data_mut()[r * n + j] += yv * (g.data()[r * n + j] - dot[grp * n + j]);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let ta = &self.nodes[*a].value;
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for i in 0..g.len() {
                        gt.data_mut()[i] += g.data()[i] * gelu_grad(ta.data()[i]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for i in 0..g.len() {
                        let s = y.data()[i];
                        gt.data_mut()[i] += g.data()[i] * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for i in 0..g.len() {
                        let t = y.data()[i];
                        gt.data_mut()[i] += g.data()[i] * (1.0 - t * t);
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let ta = &self.nodes[*a].value;
                let slope = *slope;
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for i in 0..g.len() {
                        let d = if ta.data()[i] >= 0.0 { 1.0 } else { slope };
                        gt.data_mut()[i] += g.data()[i] * d;
                    }
                });
            }
            Op::Dropout { src, keep, scale } => {
                add_to(grads, *src, &|gt: &mut Tensor| {
                    for i in 0..g.len() {
                        if keep[i] {
                            gt.data_mut()[i] += g.data()[i] * scale;
                        }
                    }
                });
            }
            Op::LayerNorm { src, eps } => {
                let ta = &self.nodes[*src].value;
                let y = &self.nodes[id].value;
                let (m, n) = (ta.rows(), ta.cols());
                add_to(grads, *src, &|gt: &mut Tensor| {
                    for i in 0..m {
                        let row = &ta.data()[i * n..(i + 1) * n];
                        let mean = row.iter().sum::<f64>() / n as f64;
                        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                        let inv = 1.0 / fmath::sqrt(var + eps);
                        let grow = &g.data()[i * n..(i + 1) * n];
                        let yrow = &y.data()[i * n..(i + 1) * n];
                        let gmean = grow.iter().sum::<f64>() / n as f64;
                        let gydot =
                            grow.iter().zip(yrow).map(|(gv, yv)| gv * yv).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gt.data_mut()[i * n + j] += inv * (grow[j] - gmean - yrow[j] * gydot);
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let gv = g.data()[0];
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for o in gt.data_mut() {
                        *o += gv;
                    }
                });
            }
            Op::Reshape(a) => {
                add_to(grads, *a, &|gt: &mut Tensor| {
                    for (o, gv) in gt.data_mut().iter_mut().zip(g.data()) {
                        *o += gv;
                    }
                });
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TapeError {
    TapeError::ShapeMismatch {
        op,
        detail: alloc::format!("{:?} vs {:?}", a.shape(), b.shape()),
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av != 0.0 {
                let brow = &b[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
}

const GELU_COEF: f64 = 0.044715;

fn gelu_value(x: f64) -> f64 {
    let a = fmath::sqrt(2.0 / core::f64::consts::PI);
    let u = a * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + fmath::tanh(u))
}

fn gelu_grad(x: f64) -> f64 {
    let a = fmath::sqrt(2.0 / core::f64::consts::PI);
    let u = a * (x + GELU_COEF * x * x * x);
    let t = fmath::tanh(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * a * (1.0 + 3.0 * GELU_COEF * x * x)
}

/// Max relative error between analytic and central finite-difference
/// gradients of a scalar-valued tensor function at `x`.
pub fn grad_check<F>(f: F, x: &Tensor) -> f64
where
    F: Fn(&mut Tape, Var) -> Result<Var, TapeError>,
{
    let h = 1e-5;
    let mut tape = Tape::new(false);
    let xv = tape.constant(x.clone());
    let out = f(&mut tape, xv).expect("grad_check function failed");
    let grads = tape.backward(out).expect("backward failed");
    let analytic = grads
        .wrt(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |pt: &Tensor| -> f64 {
        let mut t = Tape::new(false);
        let v = t.constant(pt.clone());
        let o = f(&mut t, v).expect("grad_check function failed");
        t.value(o).data()[0]
    };

    let mut max_err = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let a = analytic.data()[i];
        let denom = (fmath::abs(a) + fmath::abs(numeric)).max(1e-8);
        let e = fmath::abs(a - numeric) / denom;
        if e > max_err {
            max_err = e;
        }
    }
    max_err
}

/// Max relative error between the gradients stored in `params` and central
/// finite differences of `loss_fn` over every trainable coordinate.
///
/// The denominator is floored at 1e-5: central differences of a model-sized
/// loss carry ~1e-10 of roundoff, so coordinates whose true gradient sits
/// below the floor would otherwise report pure noise. A genuinely wrong
/// backward rule deviates at the scale of the gradients themselves and
/// still trips the check.
pub fn grad_check_params<F>(params: &mut ParamSet, mut loss_fn: F, h: f64) -> f64
where
    F: FnMut(&ParamSet) -> f64,
{
    let mut max_err = 0.0f64;
    for id in 0..params.len() {
        if !params.get(id).trainable {
            continue;
        }
        for i in 0..params.get(id).value.len() {
            let orig = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = loss_fn(params);
            params.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = loss_fn(params);
            params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = params.get(id).grad.data()[i];
            let denom = (fmath::abs(a) + fmath::abs(numeric)).max(1e-5);
            let e = fmath::abs(a - numeric) / denom;
            if e > max_err {
                max_err = e;
            }
        }
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Tensor::new(shape, data)
    }

    #[test]
    fn matmul_values() {
        let mut tape = Tape::new(false);
        let a = tape.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(Tensor::new(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
        assert!(tape.matmul(a, a).is_err());
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        // loss = sum(W·x): dL/dW = x broadcast over rows (outer-product
        // structure with the all-ones cotangent)
        let mut tape = Tape::new(false);
        let w = tape.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let x = tape.constant(Tensor::new(&[2, 1], vec![5.0, 7.0]));
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[5.0, 7.0, 5.0, 7.0]);
    }

    #[test]
    fn unused_parameter_gets_no_gradient() {
        let mut params = ParamSet::new();
        let used = params.add("used", Tensor::new(&[1, 2], vec![1.0, 2.0]));
        let unused = params.add("unused", Tensor::new(&[1, 2], vec![3.0, 4.0]));
        let mut tape = Tape::new(false);
        let u = tape.param(&params, used);
        let _nu = tape.param(&params, unused);
        let loss = tape.sum_all(u).unwrap();
        let grads = tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&grads, &mut params, 1.0);
        assert_eq!(params.get(used).grad.data(), &[1.0, 1.0]);
        assert_eq!(params.get(unused).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new(false);
        let a = tape.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(TapeError::NonScalarLoss { len: 2 })));
    }

    #[test]
    fn segment_ops_basics() {
        let mut tape = Tape::new(false);
        let x = tape.constant(Tensor::new(&[3, 1], vec![2.0, 4.0, 10.0]));
        let groups = Rc::new(vec![0usize, 0, 1]);
        let mean = tape.segment_mean(x, groups.clone(), 3).unwrap();
        assert_eq!(tape.value(mean).data(), &[3.0, 10.0, 0.0]);
        let sum = tape.segment_sum(x, groups.clone(), 2).unwrap();
        assert_eq!(tape.value(sum).data(), &[6.0, 10.0]);
        let soft = tape.segment_softmax(x, Rc::new(vec![0, 0, 1])).unwrap();
        let d = tape.value(soft).data();
        assert!((d[0] + d[1] - 1.0).abs() < 1e-12);
        assert_eq!(d[2], 1.0); // singleton group
    }

    #[test]
    fn segment_softmax_sums_to_one_per_group_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new(false);
        let x = tape.constant(rand_tensor(&mut rng, &[10, 4]));
        let groups: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let y = tape.segment_softmax(x, Rc::new(groups.clone())).unwrap();
        for g in 0..3 {
            for c in 0..4 {
                let s: f64 = (0..10)
                    .filter(|&r| groups[r] == g)
                    .map(|r| tape.value(y).at(r, c))
                    .sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn activation_values() {
        let mut tape = Tape::new(false);
        let x = tape.constant(Tensor::new(&[1, 3], vec![0.0, 8.0, -8.0]));
        let y = tape.gelu(x).unwrap();
        let d = tape.value(y).data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 8.0).abs() < 1e-9, "gelu(large x) -> x");
        assert!(d[2].abs() < 1e-9);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let mut tape = Tape::new(false);
        let x = tape.constant(Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let y = tape.dropout(x, 0.5, 7).unwrap();
        assert_eq!(x, y);

        let mut tr = Tape::new(true);
        let x = tr.constant(Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let y = tr.dropout(x, 0.5, 7).unwrap();
        for (o, i) in tr.value(y).data().iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!(*o == 0.0 || (*o - 2.0 * i).abs() < 1e-12);
        }
        // same seed, same mask
        let mut tr2 = Tape::new(true);
        let x2 = tr2.constant(Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let y2 = tr2.dropout(x2, 0.5, 7).unwrap();
        assert_eq!(tr.value(y).data(), tr2.value(y2).data());
        assert!(tr2.dropout(x2, 1.0, 7).is_err());
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new(false);
        let x = tape.constant(rand_tensor(&mut rng, &[6, 16]));
        let y = tape.layer_norm(x).unwrap();
        for i in 0..6 {
            let row: Vec<f64> = (0..16).map(|j| tape.value(y).at(i, j)).collect();
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn nan_trapped_at_op_boundary() {
        let mut tape = Tape::new(false);
        let x = tape.constant(Tensor::new(&[1, 1], vec![1e308]));
        let y = tape.add(x, x);
        assert!(matches!(y, Err(TapeError::NonFinite { .. })));
    }

    #[test]
    fn affine_grad_check_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = rand_tensor(&mut rng, &[4, 3]);
        let x = rand_tensor(&mut rng, &[3, 2]);
        let err = grad_check(
            |tape, v| {
                let wv = tape.constant(w.clone());
                let y = tape.matmul(wv, v)?;
                tape.sum_all(y)
            },
            &x,
        );
        assert!(err < 1e-9, "affine grad error {err}");
    }

    #[test]
    fn sum_of_squares_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_tensor(&mut rng, &[4, 4]);
        let err = grad_check(
            |tape, v| {
                let sq = tape.mul(v, v)?;
                tape.sum_all(sq)
            },
            &x,
        );
        assert!(err < 1e-6, "sum of squares grad error {err}");
    }

    // Every op, composed into a scalar through random cotangents, against
    // central finite differences.
    #[test]
    fn all_ops_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let weights = rand_tensor(&mut rng, &[4, 5]);
        let cot = rand_tensor(&mut rng, &[6, 5]);
        let cot34 = rand_tensor(&mut rng, &[3, 4]);
        let cot31 = rand_tensor(&mut rng, &[3, 1]);
        let groups = Rc::new(vec![0usize, 1, 0, 2, 1, 0]);

        let cases: Vec<(&str, alloc::boxed::Box<dyn Fn(&mut Tape, Var) -> Result<Var, TapeError>>, Vec<usize>)> = vec![
            (
                "matmul",
                alloc::boxed::Box::new({
                    let w = weights.clone();
                    move |t: &mut Tape, v: Var| {
                        let wv = t.constant(w.clone());
                        let y = t.matmul(v, wv)?;
                        t.sum_all(y)
                    }
                }),
                vec![6, 4],
            ),
            (
                "add_mul_sub",
                alloc::boxed::Box::new(|t: &mut Tape, v: Var| {
                    let a = t.mul(v, v)?;
                    let b = t.add(a, v)?;
                    let c = t.sub(b, v)?;
                    t.sum_all(c)
                }),
                vec![3, 4],
            ),
            (
                "add_bias_mul_row",
                alloc::boxed::Box::new(|t: &mut Tape, v: Var| {
                    let row0 = t.gather(v, Rc::new(vec![0]))?;
                    let row0 = t.reshape(row0, &[4])?;
                    let row2 = t.gather(v, Rc::new(vec![2]))?;
                    let row2 = t.reshape(row2, &[4])?;
                    let y = t.add_bias(v, row0)?;
                    let z = t.mul_row(y, row2)?;
                    t.sum_all(z)
                }),
                vec![3, 4],
            ),
            (
                "concat_slice_gather",
                alloc::boxed::Box::new({
                    let c = cot34.clone();
                    move |t: &mut Tape, v: Var| {
                        let cv = t.constant(c.clone());
                        let cat = t.concat_cols(&[v, cv])?;
                        let sl = t.slice_cols(cat, 2, 4)?;
                        let g = t.gather(sl, Rc::new(vec![0, 2, 1, 2]))?;
                        let sq = t.mul(g, g)?;
                        t.sum_all(sq)
                    }
                }),
                vec![3, 4],
            ),
            (
                "concat_rows",
                alloc::boxed::Box::new({
                    let c = cot34.clone();
                    move |t: &mut Tape, v: Var| {
                        let cv = t.constant(c.clone());
                        let cat = t.concat_rows(&[v, cv, v])?;
                        let sq = t.mul(cat, cat)?;
                        t.sum_all(sq)
                    }
                }),
                vec![3, 4],
            ),
            (
                "segment_sum",
                alloc::boxed::Box::new({
                    let g = groups.clone();
                    let c = cot.clone();
                    move |t: &mut Tape, v: Var| {
                        let cv = t.constant(c.clone());
                        let w = t.mul(v, cv)?;
                        let s = t.segment_sum(w, g.clone(), 3)?;
                        let sq = t.mul(s, s)?;
                        t.sum_all(sq)
                    }
                }),
                vec![6, 5],
            ),
            (
                "segment_mean",
                alloc::boxed::Box::new({
                    let g = groups.clone();
                    move |t: &mut Tape, v: Var| {
                        let s = t.segment_mean(v, g.clone(), 4)?;
                        let sq = t.mul(s, s)?;
                        t.sum_all(sq)
                    }
                }),
                vec![6, 5],
            ),
            (
                "segment_softmax",
                alloc::boxed::Box::new({
                    let g = groups.clone();
                    let c = cot.clone();
                    move |t: &mut Tape, v: Var| {
                        let y = t.segment_softmax(v, g.clone())?;
                        let cv = t.constant(c.clone());
                        let w = t.mul(y, cv)?;
                        t.sum_all(w)
                    }
                }),
                vec![6, 5],
            ),
            (
                "gelu",
                alloc::boxed::Box::new(|t: &mut Tape, v: Var| {
                    let y = t.gelu(v)?;
                    let sq = t.mul(y, y)?;
                    t.sum_all(sq)
                }),
                vec![3, 4],
            ),
            (
                "sigmoid_tanh",
                alloc::boxed::Box::new(|t: &mut Tape, v: Var| {
                    let a = t.sigmoid(v)?;
                    let b = t.tanh(a)?;
                    t.sum_all(b)
                }),
                vec![3, 4],
            ),
            (
                "leaky_relu",
                alloc::boxed::Box::new(|t: &mut Tape, v: Var| {
                    let y = t.leaky_relu(v, 0.2)?;
                    let sq = t.mul(y, y)?;
                    t.sum_all(sq)
                }),
                vec![3, 4],
            ),
            (
                "layer_norm",
                alloc::boxed::Box::new({
                    let c = cot34.clone();
                    move |t: &mut Tape, v: Var| {
                        let y = t.layer_norm(v)?;
                        let cv = t.constant(c.clone());
                        let w = t.mul(y, cv)?;
                        t.sum_all(w)
                    }
                }),
                vec![3, 4],
            ),
            (
                "mul_scalar",
                alloc::boxed::Box::new({
                    let c = cot31.clone();
                    move |t: &mut Tape, v: Var| {
                        let s = t.gather(v, Rc::new(vec![0]))?;
                        let s = t.slice_cols(s, 0, 1)?;
                        let cv = t.constant(c.clone());
                        let y = t.mul_scalar(cv, s)?;
                        let sq = t.mul(y, y)?;
                        t.sum_all(sq)
                    }
                }),
                vec![3, 1],
            ),
            (
                "scale_shift",
                alloc::boxed::Box::new(|t: &mut Tape, v: Var| {
                    let y = t.scale_const(v, -1.7)?;
                    let z = t.add_const(y, 0.3)?;
                    let sq = t.mul(z, z)?;
                    t.sum_all(sq)
                }),
                vec![3, 4],
            ),
        ];

        for (name, f, shape) in cases {
            let x = rand_tensor(&mut rng, &shape);
            let err = grad_check(|t, v| f(t, v), &x);
            assert!(err < 1e-4, "{name}: max relative error {err}");
        }
    }

    #[test]
    fn dropout_gradient_with_fixed_seed() {
        // same seed on every evaluation, so the mask is constant and the
        // finite-difference check is valid
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = rand_tensor(&mut rng, &[4, 4]);
        let err = {
            let f = |t: &mut Tape, v: Var| {
                let y = t.dropout(v, 0.3, 99)?;
                let sq = t.mul(y, y)?;
                t.sum_all(sq)
            };
            // grad_check uses eval-mode tapes; emulate with train tapes here
            let h = 1e-5;
            let mut tape = Tape::new(true);
            let xv = tape.constant(x.clone());
            let out = f(&mut tape, xv).unwrap();
            let grads = tape.backward(out).unwrap();
            let analytic = grads.wrt(xv).unwrap().clone();
            let eval = |pt: &Tensor| -> f64 {
                let mut t = Tape::new(true);
                let v = t.constant(pt.clone());
                let o = f(&mut t, v).unwrap();
                t.value(o).data()[0]
            };
            let mut max_err = 0.0f64;
            for i in 0..x.len() {
                let mut plus = x.clone();
                plus.data_mut()[i] += h;
                let mut minus = x.clone();
                minus.data_mut()[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                let denom = (a.abs() + numeric.abs()).max(1e-8);
                max_err = max_err.max((a - numeric).abs() / denom);
            }
            max_err
        };
        assert!(err < 1e-4, "dropout grad error {err}");
    }

    #[test]
    fn deterministic_forward_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = rand_tensor(&mut rng, &[5, 5]);
        let run = || {
            let mut t = Tape::new(true);
            let v = t.constant(x.clone());
            let a = t.gelu(v).unwrap();
            let b = t.dropout(a, 0.2, 42).unwrap();
            let c = t.layer_norm(b).unwrap();
            let l = t.sum_all(c).unwrap();
            let g = t.backward(l).unwrap();
            (t.value(l).data()[0], g.wrt(v).unwrap().clone())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1.data().len(), g2.data().len());
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
