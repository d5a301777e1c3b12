//! Reverse-mode differentiation tape.
//!
//! Every primitive appends one node holding its forward value. Nodes are
//! stored in creation order, so a node's inputs always precede it and a
//! single reverse sweep visits each node after all of its consumers.

use std::borrow::Cow;

use super::kernels::{col2im_add, gemm, im2col};
use super::tensor::{check_shape, Tensor};
use crate::error::{MimError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        fan_in: usize,
        fan_out: usize,
    },
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    MeanAxis {
        input: Var,
        axis: usize,
    },
    MaxAxis {
        input: Var,
        argmax: Vec<usize>,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    Reshape(Var),
    GatherRows {
        input: Var,
        idx: Vec<usize>,
    },
    SubMatrix {
        input: Var,
        idx: Vec<usize>,
    },
    Normalize(Var),
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    l_out: usize,
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation. Leaves may borrow parameter storage for `'a`.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by one reverse sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

/// `(outer, dim, inner)` split of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn drop_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    /// Borrowed leaf (typically a model parameter).
    pub fn borrowed(&mut self, t: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.borrowed(t, true)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shape is consistent")
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(MimError::Shape {
                shape: s.to_vec(),
                reason: format!("{op} expects a matrix"),
            }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(MimError::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // ---- linear algebra -------------------------------------------------

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(MimError::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// `x · wᵀ + b` with `w` stored `[out, in]`. `x` is `[rows, in]` or `[in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (fan_out, fan_in) = self.dims2(w, "linear")?;
        let xs = self.shape(x).to_vec();
        let (rows, out_shape) = match xs.as_slice() {
            [n] if *n == fan_in => (1, vec![fan_out]),
            [r, n] if *n == fan_in => (*r, vec![*r, fan_out]),
            _ => {
                return Err(MimError::Dimension {
                    op: "linear",
                    lhs: xs,
                    rhs: vec![fan_out, fan_in],
                })
            }
        };
        let mut out = vec![0.0; rows * fan_out];
        gemm(rows, fan_in, fan_out, self.value(x), false, self.value(w), true, &mut out, 0.0);
        if let Some(b) = b {
            if self.shape(b) != [fan_out] {
                return Err(MimError::Dimension {
                    op: "linear bias",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![fan_out],
                });
            }
            let bv = self.value(b);
            for row in out.chunks_mut(fan_out) {
                row.iter_mut().zip(bv).for_each(|(o, bb)| *o += bb);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(
            out_shape,
            out,
            Op::Linear {
                x,
                w,
                b,
                rows,
                fan_in,
                fan_out,
            },
            rg,
        ))
    }

    /// Valid (unpadded) strided cross-correlation.
    ///
    /// `input` is `[c_in, len]` or `[batch, c_in, len]`, `kernel` is
    /// `[c_out, c_in, k]`, `bias` is `[c_out]`. Output length is
    /// `(len - k) / stride + 1`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(MimError::Contract("conv1d stride must be positive".into()));
        }
        let is = self.shape(input).to_vec();
        let (batch, c_in, len) = match is.as_slice() {
            [c, l] => (1, *c, *l),
            [b, c, l] => (*b, *c, *l),
            _ => {
                return Err(MimError::Shape {
                    shape: is,
                    reason: "conv1d expects [c_in, len] or [batch, c_in, len]".into(),
                })
            }
        };
        let ks = self.shape(kernel).to_vec();
        let [c_out, kc_in, k] = ks.as_slice() else {
            return Err(MimError::Shape {
                shape: ks,
                reason: "conv1d kernel must be [c_out, c_in, k]".into(),
            });
        };
        let (c_out, k) = (*c_out, *k);
        if *kc_in != c_in {
            return Err(MimError::Dimension {
                op: "conv1d",
                lhs: is,
                rhs: ks,
            });
        }
        if len < k {
            return Err(MimError::InputTooShort { len, kernel: k });
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(MimError::Dimension {
                    op: "conv1d bias",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![c_out],
                });
            }
        }
        let l_out = (len - k) / stride + 1;
        let geom = ConvGeom {
            batch,
            c_in,
            len,
            c_out,
            k,
            stride,
            l_out,
        };
        let mut out = vec![0.0; batch * c_out * l_out];
        let mut cols = vec![0.0; c_in * k * l_out];
        let xv = self.value(input);
        let wv = self.value(kernel);
        for b in 0..batch {
            im2col(&xv[b * c_in * len..(b + 1) * c_in * len], c_in, len, k, stride, l_out, &mut cols);
            let ob = &mut out[b * c_out * l_out..(b + 1) * c_out * l_out];
            gemm(c_out, c_in * k, l_out, wv, false, &cols, false, ob, 0.0);
            if let Some(bias) = bias {
                let bv = self.value(bias);
                for (row, bb) in ob.chunks_mut(l_out).zip(bv) {
                    row.iter_mut().for_each(|o| *o += bb);
                }
            }
        }
        let out_shape = if is.len() == 2 {
            vec![c_out, l_out]
        } else {
            vec![batch, c_out, l_out]
        };
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            out_shape,
            out,
            Op::Conv1d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(MimError::Dimension {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::Reshape(a), rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, op, rg))
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

    /// Adds `row` (length `n`) to every row of `a[m×n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(row).len() != n {
            return Err(MimError::Dimension {
                op: "add_row",
                lhs: vec![m, n],
                rhs: self.shape(row).to_vec(),
            });
        }
        let rv = self.value(row);
        let mut out = self.value(a).to_vec();
        for r in out.chunks_mut(n) {
            r.iter_mut().zip(rv).for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(vec![m, n], out, Op::AddRow(a, row), rg))
    }

    /// Scales row `i` of `a[m×n]` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "mul_col")?;
        if self.value(col).len() != m {
            return Err(MimError::Dimension {
                op: "mul_col",
                lhs: vec![m, n],
                rhs: self.shape(col).to_vec(),
            });
        }
        let cv = self.value(col);
        let mut out = self.value(a).to_vec();
        for (r, c) in out.chunks_mut(n).zip(cv) {
            r.iter_mut().for_each(|o| *o *= c);
        }
        let rg = self.rg(&[a, col]);
        Ok(self.push(vec![m, n], out, Op::MulCol(a, col), rg))
    }

    // ---- structural -----------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| MimError::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(MimError::Axis {
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(MimError::Dimension {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let d = self.shape(*v)[axis];
                out.extend_from_slice(&self.value(*v)[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(MimError::Axis { axis, rank: s.len() });
        }
        if len == 0 || start + len > s[axis] {
            return Err(MimError::Shape {
                shape: s,
                reason: format!("slice {start}..{} out of bounds on axis {axis}", start + len),
            });
        }
        let (outer, dim, inner) = axis_split(&s, axis);
        let av = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&av[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::Slice { input: a, axis, start }, rg))
    }

    /// Rows `idx` of `a[m×n]`, in the given order.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(a, "gather_rows")?;
        if idx.is_empty() || idx.iter().any(|&i| i >= m) {
            return Err(MimError::Contract(format!("gather_rows: bad indices for {m} rows")));
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&av[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            vec![idx.len(), n],
            out,
            Op::GatherRows {
                input: a,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// The `idx × idx` principal sub-matrix of a square `a`.
    pub fn submatrix(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(a, "submatrix")?;
        if m != n {
            return Err(MimError::Shape {
                shape: vec![m, n],
                reason: "submatrix expects a square matrix".into(),
            });
        }
        if idx.is_empty() || idx.iter().any(|&i| i >= m) {
            return Err(MimError::Contract(format!("submatrix: bad indices for {m} rows")));
        }
        let av = self.value(a);
        let k = idx.len();
        let mut out = Vec::with_capacity(k * k);
        for &i in idx {
            for &j in idx {
                out.push(av[i * n + j]);
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            vec![k, k],
            out,
            Op::SubMatrix {
                input: a,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(MimError::Axis { axis, rank: s.len() });
        }
        let (outer, dim, inner) = axis_split(&s, axis);
        let av = self.value(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let src = &av[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(x, y)| *x += y);
            }
        }
        out.iter_mut().for_each(|x| *x /= dim as f64);
        let rg = self.rg(&[a]);
        Ok(self.push(drop_axis(&s, axis), out, Op::MeanAxis { input: a, axis }, rg))
    }

    /// Maximum along `axis`; the gradient goes to the first maximal entry.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(MimError::Axis { axis, rank: s.len() });
        }
        let (outer, dim, inner) = axis_split(&s, axis);
        let av = self.value(a);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let slot = o * inner + i;
                for d in 0..dim {
                    let flat = (o * dim + d) * inner + i;
                    if d == 0 || av[flat] > out[slot] {
                        out[slot] = av[flat];
                        argmax[slot] = flat;
                    }
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(drop_axis(&s, axis), out, Op::MaxAxis { input: a, argmax }, rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "softmax_rows")?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m, n], out, Op::SoftmaxRows(a), rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "log_softmax_rows")?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m, n], out, Op::LogSoftmaxRows(a), rg))
    }

    /// `p / ‖p‖₂`.
    pub fn normalize(&mut self, p: Var) -> Result<Var> {
        let v = self.value(p);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(MimError::NonFinite("normalize of a zero vector".into()));
        }
        let out = v.iter().map(|x| x / norm).collect();
        let shape = self.shape(p).to_vec();
        let rg = self.rg(&[p]);
        Ok(self.push(shape, out, Op::Normalize(p), rg))
    }

    // ---- reverse sweep --------------------------------------------------

    /// Gradients of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(MimError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_from(&[(loss, vec![1.0])])
    }

    /// Vector-Jacobian product seeded with upstream gradients for several outputs.
    pub fn backward_from(&self, seeds: &[(Var, Vec<f64>)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (v, g) in seeds {
            if g.len() != self.value(*v).len() {
                return Err(MimError::Dimension {
                    op: "backward seed",
                    lhs: self.shape(*v).to_vec(),
                    rhs: vec![g.len()],
                });
            }
            let slot = acc(&mut grads, *v, g.len());
            slot.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if needs(*a) {
                    let da = acc(grads, *a, m * k);
                    gemm(m, n, k, g, false, val(*b), true, da, 1.0);
                }
                if needs(*b) {
                    let db = acc(grads, *b, k * n);
                    gemm(k, m, n, val(*a), true, g, false, db, 1.0);
                }
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                fan_in,
                fan_out,
            } => {
                let (r, fi, fo) = (*rows, *fan_in, *fan_out);
                if needs(*x) {
                    let dx = acc(grads, *x, r * fi);
                    gemm(r, fo, fi, g, false, val(*w), false, dx, 1.0);
                }
                if needs(*w) {
                    let dw = acc(grads, *w, fo * fi);
                    gemm(fo, r, fi, g, true, val(*x), false, dw, 1.0);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let db = acc(grads, *b, fo);
                        for row in g.chunks(fo) {
                            db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                        }
                    }
                }
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let ConvGeom {
                    batch,
                    c_in,
                    len,
                    c_out,
                    k,
                    stride,
                    l_out,
                } = *geom;
                let ck = c_in * k;
                let xv = val(*input);
                let wv = val(*kernel);
                let mut cols = vec![0.0; ck * l_out];
                let mut dcols = vec![0.0; ck * l_out];
                for bi in 0..batch {
                    let gb = &g[bi * c_out * l_out..(bi + 1) * c_out * l_out];
                    if needs(*kernel) {
                        im2col(&xv[bi * c_in * len..(bi + 1) * c_in * len], c_in, len, k, stride, l_out, &mut cols);
                        let dw = acc(grads, *kernel, c_out * ck);
                        gemm(c_out, l_out, ck, gb, false, &cols, true, dw, 1.0);
                    }
                    if needs(*input) {
                        gemm(ck, c_out, l_out, wv, true, gb, false, &mut dcols, 0.0);
                        let dx = acc(grads, *input, batch * c_in * len);
                        col2im_add(
                            &dcols,
                            c_in,
                            len,
                            k,
                            stride,
                            l_out,
                            &mut dx[bi * c_in * len..(bi + 1) * c_in * len],
                        );
                    }
                    if let Some(b) = bias {
                        if needs(*b) {
                            let db = acc(grads, *b, c_out);
                            for (d, row) in db.iter_mut().zip(gb.chunks(l_out)) {
                                *d += row.iter().sum::<f64>();
                            }
                        }
                    }
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let av = val(*a);
                    let da = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            da[i] += g[i];
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if needs(*a) {
                    let da = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    let da = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
            }
            Op::Scale(a, s) => {
                if needs(*a) {
                    let da = acc(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += s * x);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if needs(*a) {
                    let da = acc(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if needs(*b) {
                    let db = acc(grads, *b, g.len());
                    db.iter_mut().zip(g).for_each(|(d, x)| *d += sign * x);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bv = val(*b);
                    let da = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if needs(*b) {
                    let av = val(*a);
                    let db = acc(grads, *b, g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddRow(a, row) => {
                if needs(*a) {
                    let da = acc(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if needs(*row) {
                    let n = val(*row).len();
                    let dr = acc(grads, *row, n);
                    for gr in g.chunks(n) {
                        dr.iter_mut().zip(gr).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::MulCol(a, col) => {
                let n = node.shape[1];
                if needs(*a) {
                    let cv = val(*col);
                    let da = acc(grads, *a, g.len());
                    for (i, (dr, gr)) in da.chunks_mut(n).zip(g.chunks(n)).enumerate() {
                        dr.iter_mut().zip(gr).for_each(|(d, x)| *d += cv[i] * x);
                    }
                }
                if needs(*col) {
                    let av = val(*a);
                    let m = node.shape[0];
                    let dc = acc(grads, *col, m);
                    for i in 0..m {
                        dc[i] += (0..n).map(|j| g[i * n + j] * av[i * n + j]).sum::<f64>();
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(&node.shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let d = self.shape(*v)[*axis];
                    if needs(*v) {
                        let dv = acc(grads, *v, outer * d * inner);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + d) * inner];
                            dv[o * d * inner..(o + 1) * d * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += d;
                }
            }
            Op::Slice { input, axis, start } => {
                if needs(*input) {
                    let s = self.shape(*input);
                    let (outer, dim, inner) = axis_split(s, *axis);
                    let len = node.shape[*axis];
                    let da = acc(grads, *input, outer * dim * inner);
                    for o in 0..outer {
                        let base = o * dim * inner + start * inner;
                        da[base..base + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let n = val(*a).len();
                    acc(grads, *a, n).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if needs(*a) {
                    let n = val(*a).len();
                    let share = g[0] / n as f64;
                    acc(grads, *a, n).iter_mut().for_each(|d| *d += share);
                }
            }
            Op::MeanAxis { input, axis } => {
                if needs(*input) {
                    let s = self.shape(*input);
                    let (outer, dim, inner) = axis_split(s, *axis);
                    let da = acc(grads, *input, outer * dim * inner);
                    for o in 0..outer {
                        for d in 0..dim {
                            let dst = &mut da[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                            dst.iter_mut()
                                .zip(&g[o * inner..(o + 1) * inner])
                                .for_each(|(a, b)| *a += b / dim as f64);
                        }
                    }
                }
            }
            Op::MaxAxis { input, argmax } => {
                if needs(*input) {
                    let n = val(*input).len();
                    let da = acc(grads, *input, n);
                    for (slot, &flat) in argmax.iter().enumerate() {
                        da[flat] += g[slot];
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if needs(*a) {
                    let n = node.shape[1];
                    let da = acc(grads, *a, g.len());
                    for ((dr, gr), yr) in da.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                if needs(*a) {
                    let n = node.shape[1];
                    let da = acc(grads, *a, g.len());
                    for ((dr, gr), yr) in da.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..n {
                            dr[j] += gr[j] - yr[j].exp() * gsum;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let da = acc(grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if needs(*a) {
                    let da = acc(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
            }
            Op::GatherRows { input, idx } => {
                if needs(*input) {
                    let s = self.shape(*input);
                    let n = s[1];
                    let da = acc(grads, *input, s[0] * n);
                    for (r, &i) in idx.iter().enumerate() {
                        da[i * n..(i + 1) * n]
                            .iter_mut()
                            .zip(&g[r * n..(r + 1) * n])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::SubMatrix { input, idx } => {
                if needs(*input) {
                    let n = self.shape(*input)[1];
                    let k = idx.len();
                    let da = acc(grads, *input, n * n);
                    for (r, &i) in idx.iter().enumerate() {
                        for (c, &j) in idx.iter().enumerate() {
                            da[i * n + j] += g[r * k + c];
                        }
                    }
                }
            }
            Op::Normalize(p) => {
                if needs(*p) {
                    let pv = val(*p);
                    let norm = pv.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let dot: f64 = g.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                    let dp = acc(grads, *p, g.len());
                    for i in 0..g.len() {
                        dp[i] += (g[i] - out[i] * dot) / norm;
                    }
                }
            }
        }
    }
}
