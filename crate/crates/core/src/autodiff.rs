//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive executed during a forward pass in
//! topological order. [`Tape::backward`] replays the record once in reverse,
//! summing adjoints over fan-out, and returns a [`Gradients`] table covering
//! every node that requires a gradient. Parameters are referenced from a
//! borrowed [`ParamStore`] rather than copied onto the tape.

use crate::error::{Error, Result};
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::tensor::{precision, Precision, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gather { x: Var, index: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Mean { x: Var, axis: usize },
    Sum(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    L1 { pred: Var, target: Vec<f64> },
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// The computation record.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
    precision: Precision,
    consumed: bool,
}

impl Default for Tape<'static> {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape<'static> {
    pub fn new() -> Self {
        Tape { params: None, param_vars: Vec::new(), nodes: Vec::new(), precision: precision(), consumed: false }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn prod(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn conv_out(n: usize, k: usize, geom: ConvGeom) -> Option<usize> {
    let padded = n + 2 * geom.pad;
    if padded < k || geom.stride == 0 {
        return None;
    }
    Some((padded - k) / geom.stride + 1)
}

impl<'p> Tape<'p> {
    pub fn with_params(params: &'p ParamStore) -> Self {
        Tape {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            precision: precision(),
            consumed: false,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.params.expect("param node without store").get(*id).data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape invariant")
    }

    /// Every softmax output recorded so far, in recording order.
    pub fn softmax_outputs(&self) -> Vec<Var> {
        self.nodes.iter().enumerate().filter(|(_, n)| matches!(n.op, Op::Softmax { .. })).map(|(i, _)| Var(i)).collect()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, mut data: Vec<f64>, op: Op, name: &str) -> Result<Var> {
        debug_assert_eq!(prod(&shape), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.precision.round_slice(&mut data);
        let requires_grad = self.op_requires_grad(&op);
        self.nodes.push(Node { shape, value: Value::Owned(data), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => rg(a) || rg(b),
            Op::MatMul { a, b, .. } => rg(a) || rg(b),
            Op::Scale(x, _)
            | Op::Transpose(x)
            | Op::Relu(x)
            | Op::Gelu(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Softmax { x }
            | Op::Gather { x, .. }
            | Op::Mean { x, .. }
            | Op::Sum(x)
            | Op::Reshape(x) => rg(x),
            Op::LayerNorm { x, gamma, beta, .. } => rg(x) || rg(gamma) || rg(beta),
            Op::Concat { parts, .. } => parts.iter().any(rg),
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => {
                rg(x) || rg(w) || b.as_ref().is_some_and(rg)
            }
            Op::CrossEntropy { logits, .. } => rg(logits),
            Op::L1 { pred, .. } => rg(pred),
        }
    }

    // ---- leaves ----------------------------------------------------------

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf_inner(t, false)
    }

    /// An input that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.leaf_inner(t, true)
    }

    fn leaf_inner(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        let mut data = t.into_data();
        self.precision.round_slice(&mut data);
        self.nodes.push(Node { shape, value: Value::Owned(data), op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Registers a parameter once per tape and returns its handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        let entry = store.entry(id);
        self.nodes.push(Node {
            shape: entry.value.shape().to_vec(),
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: entry.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    // ---- element-wise ----------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, op, what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[..., d] + bias[d]`, broadcasting the bias over leading axes.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.shape(x).last().copied().unwrap_or(1);
        if self.value(bias).len() != d {
            return Err(Error::Shape(format!(
                "bias {:?} does not match last axis of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.value(bias);
        let data = self.value(x).iter().enumerate().map(|(i, &v)| v + b[i % d]).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, data, Op::AddBias(x, bias), "add_bias")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, data, Op::Scale(x, c), "scale")
    }

    fn unary(&mut self, x: Var, what: &str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let data = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, data, op, what)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "relu", |v| v.max(0.0), Op::Relu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            x,
            "gelu",
            |v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()),
            Op::Gelu(x),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "tanh", f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    // ---- linear algebra --------------------------------------------------

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_inner(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_inner(a, b, true)
    }

    fn matmul_inner(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (br, bc) = self.dims2(b, "matmul")?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: {:?} x {:?}{}",
                self.shape(a),
                self.shape(b),
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        if trans_b {
            for i in 0..m {
                let ar = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    let br = &bv[j * k..(j + 1) * k];
                    out[i * n + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
                }
            }
        } else {
            matmul_acc(av, bv, &mut out, m, k, n);
        }
        self.push(vec![m, n], out, Op::MatMul { a, b, trans_b }, "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        self.push(vec![c, r], out, Op::Transpose(x), "transpose")
    }

    // ---- normalisation ---------------------------------------------------

    /// Softmax over the last axis. Entries where `mask` is `false` receive
    /// exactly zero weight, as if their logits were −∞.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let n = self.shape(x).last().copied().unwrap_or(1);
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::Shape(format!("mask of length {} for last axis {}", m.len(), n)));
            }
            if n > 0 && !m.iter().any(|&b| b) {
                return Err(Error::DegenerateAttention(format!("all {n} entries masked")));
            }
        }
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        if n > 0 {
            for (row, o) in v.chunks(n).zip(out.chunks_mut(n)) {
                softmax_row(row, o, mask);
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Softmax { x }, "softmax")
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::Param(format!("layer norm eps must be positive, got {eps}")));
        }
        let d = self.shape(x).last().copied().unwrap_or(1);
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::Shape(format!(
                "layer norm over {:?} with gamma {:?} and beta {:?}",
                self.shape(x),
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let v = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let rows = if d == 0 { 0 } else { v.len() / d };
        let mut out = vec![0.0; v.len()];
        let mut xhat = vec![0.0; v.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &v[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|t| (t - mu) * (t - mu)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mu) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, "layer_norm")
    }

    // ---- indexing and layout --------------------------------------------

    /// `out[i] = x[index[i]]` over flat storage, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        if prod(&shape) != index.len() {
            return Err(Error::Shape(format!("gather of {} values into shape {:?}", index.len(), shape)));
        }
        let v = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= v.len()) {
            return Err(Error::Index(format!("gather index {bad} outside {} values", v.len())));
        }
        let data = index.iter().map(|&i| v[i]).collect();
        self.push(shape, data, Op::Gather { x, index }, "gather")
    }

    /// Row gather from a `[V, D]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!("embedding id {bad} out of range for vocabulary of {v}")));
        }
        let index = ids.iter().flat_map(|&i| (0..d).map(move |j| i * d + j)).collect();
        self.gather(table, index, vec![ids.len(), d])
    }

    /// Selects rows of a matrix, in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = self.dims2(x, "select_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Index(format!("row {bad} out of range for {n} rows")));
        }
        let index = rows.iter().flat_map(|&r| (0..d).map(move |j| r * d + j)).collect();
        self.gather(x, index, vec![rows.len(), d])
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!("narrow [{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let outer = prod(&shape[..axis]);
        let inner = prod(&shape[axis + 1..]);
        let ext = shape[axis];
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for a in start..start + len {
                let base = (o * ext + a) * inner;
                index.extend(base..base + inner);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather(x, index, out_shape)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::EmptyInput("concat of no tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} for shape {base:?}")));
        }
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Shape(format!("concat along {axis}: {:?} vs {:?}", s, base)));
            }
        }
        let outer = prod(&base[..axis]);
        let inner = prod(&base[axis + 1..]);
        let total: usize = parts.iter().map(|p| self.shape(*p)[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(shape, out, Op::Concat { parts: parts.to_vec(), axis }, "concat")
    }

    /// Mean over `axis`, keeping it with extent 1.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("mean axis {axis} for shape {shape:?}")));
        }
        let ext = shape[axis];
        if ext == 0 {
            return Err(Error::EmptyInput(format!("mean over empty axis {axis} of {shape:?}")));
        }
        let outer = prod(&shape[..axis]);
        let inner = prod(&shape[axis + 1..]);
        let v = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..ext {
                for i in 0..inner {
                    out[o * inner + i] += v[(o * ext + a) * inner + i];
                }
            }
        }
        for t in &mut out {
            *t /= ext as f64;
        }
        let mut oshape = shape;
        oshape[axis] = 1;
        self.push(oshape, out, Op::Mean { x, axis }, "mean")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push(vec![], vec![s], Op::Sum(x), "sum")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if prod(shape) != self.value(x).len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {:?}", self.shape(x), shape)));
        }
        let data = self.value(x).to_vec();
        self.push(shape.to_vec(), data, Op::Reshape(x), "reshape")
    }

    // ---- convolution -----------------------------------------------------

    /// 2-D convolution of a `[C, H, W]` input with `[O, C, kh, kw]` weights.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (c, h, wd) = dims3(self.shape(x), "conv2d input")?;
        let (o, wc, kh, kw) = dims4(self.shape(w), "conv2d weight")?;
        if wc != c {
            return Err(Error::Shape(format!(
                "conv2d weight {:?} expects {wc} channels, input {:?} has {c}",
                self.shape(w),
                self.shape(x)
            )));
        }
        check_bias(self, b, o, "conv2d")?;
        let (ho, wo) = match (conv_out(h, kh, geom), conv_out(wd, kw, geom)) {
            (Some(a), Some(bb)) => (a, bb),
            _ => return Err(Error::Shape(format!("conv2d kernel {kh}x{kw} larger than padded input {h}x{wd}"))),
        };
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; o * ho * wo];
        if let Some(b) = b {
            let bv = self.value(b);
            for oc in 0..o {
                out[oc * ho * wo..(oc + 1) * ho * wo].iter_mut().for_each(|t| *t = bv[oc]);
            }
        }
        let (s, p) = (geom.stride as isize, geom.pad as isize);
        for oc in 0..o {
            for ic in 0..c {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wt = wv[((oc * c + ic) * kh + ki) * kw + kj];
                        if wt == 0.0 {
                            continue;
                        }
                        for oi in 0..ho {
                            let ii = oi as isize * s - p + ki as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            let xrow = &xv[(ic * h + ii as usize) * wd..(ic * h + ii as usize + 1) * wd];
                            let orow = &mut out[(oc * ho + oi) * wo..(oc * ho + oi + 1) * wo];
                            for (oj, ov) in orow.iter_mut().enumerate() {
                                let jj = oj as isize * s - p + kj as isize;
                                if jj >= 0 && jj < wd as isize {
                                    *ov += wt * xrow[jj as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(vec![o, ho, wo], out, Op::Conv2d { x, w, b, geom }, "conv2d")
    }

    /// Transposed 2-D convolution of `[C, H, W]` with `[C, O, kh, kw]` weights;
    /// output extent `(H - 1)·stride − 2·pad + kh`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (c, h, wd) = dims3(self.shape(x), "conv_transpose2d input")?;
        let (wc, o, kh, kw) = dims4(self.shape(w), "conv_transpose2d weight")?;
        if wc != c {
            return Err(Error::Shape(format!(
                "conv_transpose2d weight {:?} expects {wc} channels, input {:?} has {c}",
                self.shape(w),
                self.shape(x)
            )));
        }
        check_bias(self, b, o, "conv_transpose2d")?;
        let span_h = (h.max(1) - 1) * geom.stride + kh;
        let span_w = (wd.max(1) - 1) * geom.stride + kw;
        if span_h <= 2 * geom.pad || span_w <= 2 * geom.pad || geom.stride == 0 {
            return Err(Error::Shape("conv_transpose2d padding consumes the whole output".into()));
        }
        let (ho, wo) = (span_h - 2 * geom.pad, span_w - 2 * geom.pad);
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; o * ho * wo];
        if let Some(b) = b {
            let bv = self.value(b);
            for oc in 0..o {
                out[oc * ho * wo..(oc + 1) * ho * wo].iter_mut().for_each(|t| *t = bv[oc]);
            }
        }
        let (s, p) = (geom.stride as isize, geom.pad as isize);
        for ic in 0..c {
            for oc in 0..o {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wt = wv[((ic * o + oc) * kh + ki) * kw + kj];
                        for i in 0..h {
                            let oi = i as isize * s - p + ki as isize;
                            if oi < 0 || oi >= ho as isize {
                                continue;
                            }
                            for j in 0..wd {
                                let oj = j as isize * s - p + kj as isize;
                                if oj < 0 || oj >= wo as isize {
                                    continue;
                                }
                                out[(oc * ho + oi as usize) * wo + oj as usize] += wt * xv[(ic * h + i) * wd + j];
                            }
                        }
                    }
                }
            }
        }
        self.push(vec![o, ho, wo], out, Op::ConvTranspose2d { x, w, b, geom }, "conv_transpose2d")
    }

    // ---- losses ----------------------------------------------------------

    /// Softmax cross-entropy of a logit vector against a class index.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let v = self.value(logits);
        let n = v.len();
        if target >= n {
            return Err(Error::Index(format!("target class {target} out of range for {n} logits")));
        }
        let mut probs = vec![0.0; n];
        softmax_row(v, &mut probs, None);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        let loss = lse - v[target];
        self.push(vec![], vec![loss], Op::CrossEntropy { logits, target, probs }, "cross_entropy")
    }

    /// Mean absolute error against a fixed target.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.value(pred).len() != target.numel() {
            return Err(Error::Shape(format!(
                "l1 loss between {:?} and target {:?}",
                self.shape(pred),
                target.shape()
            )));
        }
        let n = target.numel().max(1) as f64;
        let loss = self.value(pred).iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        self.push(vec![], vec![loss], Op::L1 { pred, target: target.data().to_vec() }, "l1_loss")
    }

    // ---- reverse pass ----------------------------------------------------

    /// Propagates adjoints from a scalar `loss`. A record can be replayed once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Backward("computation record already consumed".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let param_vars = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        Ok(Gradients { nodes: grads, param_vars })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = match &node.value {
            Value::Owned(d) => d.as_slice(),
            Value::Param(_) => return,
        };
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !rg(v) {
                return;
            }
            let n = self.value(v).len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(t, u)| *t -= u));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |s| s.iter_mut().zip(g.iter().zip(bv)).for_each(|(t, (u, y))| *t += u * y));
                acc(*b, &mut |s| s.iter_mut().zip(g.iter().zip(av)).for_each(|(t, (u, x))| *t += u * x));
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |s| add_into(s, g));
                let d = self.value(*b).len();
                acc(*b, &mut |s| {
                    for (k, u) in g.iter().enumerate() {
                        s[k % d] += u;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(t, u)| *t += c * u)),
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = node.shape[1];
                let (av, bv) = (self.value(*a), self.value(*b));
                if *trans_b {
                    // C = A Bᵀ, B is [n, k]: dA = G B, dB = Gᵀ A
                    acc(*a, &mut |s| matmul_acc(g, bv, s, m, n, k));
                    acc(*b, &mut |s| matmul_tn_acc(g, av, s, m, n, k));
                } else {
                    // dA = G Bᵀ, dB = Aᵀ G
                    acc(*a, &mut |s| matmul_nt_acc(g, bv, s, m, n, k));
                    acc(*b, &mut |s| matmul_tn_acc(av, g, s, m, k, n));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                acc(*x, &mut |s| {
                    for ii in 0..r {
                        for jj in 0..c {
                            s[ii * c + jj] += g[jj * r + ii];
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |s| {
                    for k in 0..s.len() {
                        if xv[k] > 0.0 {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * gelu_grad(xv[k]);
                    }
                });
            }
            Op::Tanh(x) => acc(*x, &mut |s| {
                for k in 0..s.len() {
                    s[k] += g[k] * (1.0 - out[k] * out[k]);
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |s| {
                for k in 0..s.len() {
                    s[k] += g[k] * out[k] * (1.0 - out[k]);
                }
            }),
            Op::Softmax { x } => {
                let n = node.shape.last().copied().unwrap_or(1);
                if n == 0 {
                    return;
                }
                acc(*x, &mut |s| {
                    for ((sr, gr), yr) in s.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for k in 0..n {
                            sr[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = node.shape.last().copied().unwrap_or(1);
                let gv = self.value(*gamma);
                acc(*x, &mut |s| {
                    for (r, &sd) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dhh = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dhh += dh * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dhh /= d as f64;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            s[r * d + j] += sd * (dh - mean_dh - hr[j] * mean_dhh);
                        }
                    }
                });
                acc(*gamma, &mut |s| {
                    for (k, (u, h)) in g.iter().zip(xhat).enumerate() {
                        s[k % d] += u * h;
                    }
                });
                acc(*beta, &mut |s| {
                    for (k, u) in g.iter().enumerate() {
                        s[k % d] += u;
                    }
                });
            }
            Op::Gather { x, index } => acc(*x, &mut |s| {
                for (u, &ix) in g.iter().zip(index) {
                    s[ix] += u;
                }
            }),
            Op::Concat { parts, axis } => {
                let outer = prod(&node.shape[..*axis]);
                let inner = prod(&node.shape[*axis + 1..]);
                let total = node.shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let block = self.shape(*p)[*axis] * inner;
                    acc(*p, &mut |s| {
                        for o in 0..outer {
                            add_into(&mut s[o * block..(o + 1) * block], &g[o * total + offset..o * total + offset + block]);
                        }
                    });
                    offset += block;
                }
            }
            Op::Mean { x, axis } => {
                let shape = self.shape(*x);
                let ext = shape[*axis];
                let outer = prod(&shape[..*axis]);
                let inner = prod(&shape[*axis + 1..]);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for a in 0..ext {
                            for k in 0..inner {
                                s[(o * ext + a) * inner + k] += g[o * inner + k] / ext as f64;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|t| *t += g[0])),
            Op::Reshape(x) => acc(*x, &mut |s| add_into(s, g)),
            Op::Conv2d { x, w, b, geom } => self.conv2d_backward(*x, *w, *b, *geom, &node.shape, g, &mut acc),
            Op::ConvTranspose2d { x, w, b, geom } => {
                self.conv_t2d_backward(*x, *w, *b, *geom, &node.shape, g, &mut acc)
            }
            Op::CrossEntropy { logits, target, probs } => acc(*logits, &mut |s| {
                for (k, p) in probs.iter().enumerate() {
                    let onehot = if k == *target { 1.0 } else { 0.0 };
                    s[k] += g[0] * (p - onehot);
                }
            }),
            Op::L1 { pred, target } => {
                let pv = self.value(*pred);
                let n = target.len().max(1) as f64;
                acc(*pred, &mut |s| {
                    for k in 0..s.len() {
                        let d = pv[k] - target[k];
                        let sign = if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        s[k] += g[0] * sign / n;
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        out_shape: &[usize],
        g: &[f64],
        acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [f64])),
    ) {
        let (c, h, wd) = (self.shape(x)[0], self.shape(x)[1], self.shape(x)[2]);
        let (o, _, kh, kw) = (self.shape(w)[0], self.shape(w)[1], self.shape(w)[2], self.shape(w)[3]);
        let (ho, wo) = (out_shape[1], out_shape[2]);
        let (xv, wv) = (self.value(x), self.value(w));
        let (s, p) = (geom.stride as isize, geom.pad as isize);
        let visit = |f: &mut dyn FnMut(usize, usize, usize, usize)| {
            for oc in 0..o {
                for ic in 0..c {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let widx = ((oc * c + ic) * kh + ki) * kw + kj;
                            for oi in 0..ho {
                                let ii = oi as isize * s - p + ki as isize;
                                if ii < 0 || ii >= h as isize {
                                    continue;
                                }
                                for oj in 0..wo {
                                    let jj = oj as isize * s - p + kj as isize;
                                    if jj < 0 || jj >= wd as isize {
                                        continue;
                                    }
                                    let xidx = (ic * h + ii as usize) * wd + jj as usize;
                                    f(widx, xidx, (oc * ho + oi) * wo + oj, 0);
                                }
                            }
                        }
                    }
                }
            }
        };
        acc(x, &mut |sx| visit(&mut |wi, xi, gi, _| sx[xi] += wv[wi] * g[gi]));
        acc(w, &mut |sw| visit(&mut |wi, xi, gi, _| sw[wi] += xv[xi] * g[gi]));
        if let Some(b) = b {
            acc(b, &mut |sb| {
                for oc in 0..o {
                    sb[oc] += g[oc * ho * wo..(oc + 1) * ho * wo].iter().sum::<f64>();
                }
            });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_t2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        out_shape: &[usize],
        g: &[f64],
        acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [f64])),
    ) {
        let (c, h, wd) = (self.shape(x)[0], self.shape(x)[1], self.shape(x)[2]);
        let (_, o, kh, kw) = (self.shape(w)[0], self.shape(w)[1], self.shape(w)[2], self.shape(w)[3]);
        let (ho, wo) = (out_shape[1], out_shape[2]);
        let (xv, wv) = (self.value(x), self.value(w));
        let (s, p) = (geom.stride as isize, geom.pad as isize);
        let visit = |f: &mut dyn FnMut(usize, usize, usize)| {
            for ic in 0..c {
                for oc in 0..o {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let widx = ((ic * o + oc) * kh + ki) * kw + kj;
                            for i in 0..h {
                                let oi = i as isize * s - p + ki as isize;
                                if oi < 0 || oi >= ho as isize {
                                    continue;
                                }
                                for j in 0..wd {
                                    let oj = j as isize * s - p + kj as isize;
                                    if oj < 0 || oj >= wo as isize {
                                        continue;
                                    }
                                    f(widx, (ic * h + i) * wd + j, (oc * ho + oi as usize) * wo + oj as usize);
                                }
                            }
                        }
                    }
                }
            }
        };
        acc(x, &mut |sx| visit(&mut |wi, xi, gi| sx[xi] += wv[wi] * g[gi]));
        acc(w, &mut |sw| visit(&mut |wi, xi, gi| sw[wi] += xv[xi] * g[gi]));
        if let Some(b) = b {
            acc(b, &mut |sb| {
                for oc in 0..o {
                    sb[oc] += g[oc * ho * wo..(oc + 1) * ho * wo].iter().sum::<f64>();
                }
            });
        }
    }
}

/// Adjoints produced by one backward pass.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any flowed to it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.param_vars.iter().find(|(p, _)| *p == id).and_then(|(_, v)| self.wrt(*v))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.param_vars.iter().filter_map(|(p, v)| self.wrt(*v).map(|g| (*p, g)))
    }

    pub fn accumulate_into(&self, buf: &mut GradBuffer) {
        for (p, g) in self.params() {
            buf.accumulate(p, g);
        }
    }
}

fn dims3(s: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match s {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(Error::Shape(format!("{what} must be rank 3, got {s:?}"))),
    }
}

fn dims4(s: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match s {
        [a, b, c, d] => Ok((*a, *b, *c, *d)),
        _ => Err(Error::Shape(format!("{what} must be rank 4, got {s:?}"))),
    }
}

fn check_bias(tape: &Tape<'_>, b: Option<Var>, o: usize, what: &str) -> Result<()> {
    if let Some(b) = b {
        if tape.value(b).len() != o {
            return Err(Error::Shape(format!("{what} bias {:?} for {o} output channels", tape.shape(b))));
        }
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn softmax_row(row: &[f64], out: &mut [f64], mask: Option<&[bool]>) {
    let keep = |k: usize| mask.is_none_or(|m| m[k]);
    let max = row
        .iter()
        .enumerate()
        .filter(|(k, _)| keep(*k))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (k, o) in out.iter_mut().enumerate() {
        *o = if keep(k) { (row[k] - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
