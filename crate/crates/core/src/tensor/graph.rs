//! Tape-based compute graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its output data and enough
//! metadata to replay the chain rule. Nodes are created in topological
//! order by construction, so `backward` is a single reverse sweep.

use super::kernels::{self, ConvDims};
use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use crate::error::TensorError;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Matmul {
        a: TensorId,
        b: TensorId,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    AddSame {
        a: TensorId,
        b: TensorId,
    },
    SubSame {
        a: TensorId,
        b: TensorId,
    },
    MulSame {
        a: TensorId,
        b: TensorId,
    },
    AddBiasRow {
        x: TensorId,
        bias: TensorId,
        rows: usize,
        cols: usize,
    },
    AddScalarT {
        x: TensorId,
        s: TensorId,
    },
    Scale {
        a: TensorId,
        c: f64,
    },
    AddConst {
        a: TensorId,
    },
    Relu {
        a: TensorId,
    },
    Gelu {
        a: TensorId,
    },
    Sigmoid {
        a: TensorId,
    },
    Softplus {
        a: TensorId,
    },
    Abs {
        a: TensorId,
    },
    Ln {
        a: TensorId,
    },
    ClampMin {
        a: TensorId,
        c: f64,
    },
    SoftmaxLast {
        a: TensorId,
        rows: usize,
        cols: usize,
    },
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        rows: usize,
        cols: usize,
        eps: f64,
    },
    Conv1d {
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
        dims: ConvDims,
    },
    ConvT1d {
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
        dims: ConvDims,
    },
    Embed {
        table: TensorId,
        idx: Vec<usize>,
        dim: usize,
    },
    CrossEntropyMean {
        logits: TensorId,
        targets: Vec<i64>,
        rows: usize,
        cols: usize,
        count: usize,
    },
    SumAll {
        a: TensorId,
    },
    MeanAll {
        a: TensorId,
    },
    MeanRows {
        a: TensorId,
        rows: usize,
        cols: usize,
    },
    AvgPoolRows {
        a: TensorId,
        window: usize,
        rows_out: usize,
        cols: usize,
    },
    ConcatCols {
        parts: Vec<TensorId>,
        widths: Vec<usize>,
        rows: usize,
    },
    ConcatRows {
        parts: Vec<TensorId>,
        heights: Vec<usize>,
        cols: usize,
    },
    SliceCols {
        a: TensorId,
        start: usize,
        len: usize,
        cols_in: usize,
        rows: usize,
    },
    SliceRows {
        a: TensorId,
        start: usize,
        len: usize,
        cols: usize,
    },
    RepeatRow {
        row: TensorId,
        n: usize,
        cols: usize,
    },
    CausalMask {
        a: TensorId,
        rows: usize,
    },
    KeyMask {
        a: TensorId,
        visible: Vec<bool>,
        rows: usize,
    },
    ColMask01 {
        a: TensorId,
        visible: Vec<bool>,
        rows: usize,
    },
    Reshape {
        a: TensorId,
    },
    Detach {
        a: TensorId,
    },
    StIdentity {
        soft: TensorId,
    },
}

pub(crate) struct Node<E: Scalar> {
    pub data: Vec<E>,
    pub shape: Vec<usize>,
    pub grad: Option<Vec<E>>,
    pub needs_grad: bool,
    pub op: Op,
    pub saved: Vec<E>,
    pub param: Option<ParamId>,
}

pub struct Graph<E: Scalar> {
    pub(crate) nodes: Vec<Node<E>>,
}

const NEG_INF: f64 = -1e9;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn data(&self, id: TensorId) -> &[E] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[E]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0].to_f64()
    }

    fn push(&mut self, data: Vec<E>, shape: Vec<usize>, op: Op, needs_grad: bool) -> TensorId {
        debug_assert_eq!(data.len(), numel(&shape));
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
            needs_grad,
            op,
            saved: Vec::new(),
            param: None,
        });
        id
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, data: Vec<E>, shape: Vec<usize>) -> TensorId {
        self.push(data, shape, Op::Leaf, false)
    }

    pub fn leaf_grad(&mut self, data: Vec<E>, shape: Vec<usize>) -> TensorId {
        self.push(data, shape, Op::Leaf, true)
    }

    /// Bind a stored parameter as a graph leaf. Trainable bindings are picked
    /// up by `collect_param_grads` after `backward`.
    pub fn param(&mut self, store: &ParamStore, pid: ParamId, trainable: bool) -> TensorId {
        let p = store.get(pid);
        let data = p.data.iter().map(|&x| E::from_f32(x)).collect();
        let id = self.push(data, p.shape.clone(), Op::Leaf, trainable);
        self.nodes[id.0].param = Some(pid);
        id
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.matmul_t(a, b, false, false)
    }

    /// `ta`/`tb` treat the operand as transposed without materializing it.
    pub fn matmul_t(
        &mut self,
        a: TensorId,
        b: TensorId,
        ta: bool,
        tb: bool,
    ) -> Result<TensorId, TensorError> {
        let ashape = self.shape(a).to_vec();
        let bshape = self.shape(b).to_vec();
        if ashape.len() != 2 || bshape.len() != 2 {
            return Err(TensorError::NotAMatrix {
                op: "matmul",
                lhs: ashape,
                rhs: bshape,
            });
        }
        let (m, ka) = if ta {
            (ashape[1], ashape[0])
        } else {
            (ashape[0], ashape[1])
        };
        let (kb, n) = if tb {
            (bshape[1], bshape[0])
        } else {
            (bshape[0], bshape[1])
        };
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ashape,
                rhs: bshape,
            });
        }
        let k = ka;
        let mut out = vec![E::ZERO; m * n];
        kernels::matmul(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            ta,
            tb,
            m,
            k,
            n,
            &mut out,
            false,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, vec![m, n], Op::Matmul { a, b, ta, tb, m, k, n }, needs))
    }

    fn binary_same(
        &mut self,
        a: TensorId,
        b: TensorId,
        op_name: &'static str,
        f: impl Fn(E, E) -> E,
        make: impl Fn(TensorId, TensorId) -> Op,
    ) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<E> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, shape, make(a, b), needs))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary_same(a, b, "add", |x, y| x + y, |a, b| Op::AddSame { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary_same(a, b, "sub", |x, y| x - y, |a, b| Op::SubSame { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary_same(a, b, "mul", |x, y| x * y, |a, b| Op::MulSame { a, b })
    }

    /// `x[rows × cols] + bias[cols]`, broadcast over rows.
    pub fn add_bias_row(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId, TensorError> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 2 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias_row",
                lhs: xs,
                rhs: bs,
            });
        }
        let (rows, cols) = (xs[0], xs[1]);
        let bias_data = &self.nodes[bias.0].data;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let x_row = &self.nodes[x.0].data[r * cols..(r + 1) * cols];
            for c in 0..cols {
                data.push(x_row[c] + bias_data[c]);
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(data, xs, Op::AddBiasRow { x, bias, rows, cols }, needs))
    }

    /// Broadcast-add a `[1]` tensor to every element.
    pub fn add_scalar_t(&mut self, x: TensorId, s: TensorId) -> Result<TensorId, TensorError> {
        if numel(self.shape(s)) != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "add_scalar_t",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let sv = self.nodes[s.0].data[0];
        let data: Vec<E> = self.nodes[x.0].data.iter().map(|&v| v + sv).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(data, shape, Op::AddScalarT { x, s }, needs))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let ce = E::from_f64(c);
        let data: Vec<E> = self.nodes[a.0].data.iter().map(|&v| v * ce).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(data, shape, Op::Scale { a, c }, needs)
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> TensorId {
        let ce = E::from_f64(c);
        let data: Vec<E> = self.nodes[a.0].data.iter().map(|&v| v + ce).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(data, shape, Op::AddConst { a }, needs)
    }

    fn unary(
        &mut self,
        a: TensorId,
        f: impl Fn(E) -> E,
        op: Op,
    ) -> TensorId {
        let data: Vec<E> = self.nodes[a.0].data.iter().map(|&v| f(v)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(data, shape, op, needs)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |v| v.maxv(E::ZERO), Op::Relu { a })
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, gelu_forward, Op::Gelu { a })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, sigmoid_forward, Op::Sigmoid { a })
    }

    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        self.unary(a, softplus_forward, Op::Softplus { a })
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |v| v.abs(), Op::Abs { a })
    }

    pub fn ln(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |v| v.ln(), Op::Ln { a })
    }

    pub fn clamp_min(&mut self, a: TensorId, c: f64) -> TensorId {
        let ce = E::from_f64(c);
        self.unary(a, |v| v.maxv(ce), Op::ClampMin { a, c })
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax_lastdim(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        let cols = *shape.last().ok_or(TensorError::NotAMatrix {
            op: "softmax_lastdim",
            lhs: shape.clone(),
            rhs: vec![],
        })?;
        if cols == 0 {
            return Err(TensorError::EmptyDim { op: "softmax_lastdim" });
        }
        let rows = numel(&shape) / cols;
        let src = &self.nodes[a.0].data;
        let mut data = vec![E::ZERO; rows * cols];
        for r in 0..rows {
            let x_row = &src[r * cols..(r + 1) * cols];
            let mut mx = x_row[0];
            for &v in x_row.iter().skip(1) {
                mx = mx.maxv(v);
            }
            let mut sum = 0.0_f64;
            let out_row = &mut data[r * cols..(r + 1) * cols];
            for c in 0..cols {
                let e = (x_row[c] - mx).exp();
                out_row[c] = e;
                sum += e.to_f64();
            }
            let inv = E::from_f64(1.0 / sum);
            for v in out_row.iter_mut() {
                *v = *v * inv;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(data, shape, Op::SoftmaxLast { a, rows, cols }, needs))
    }

    /// Row-wise layer norm over the last dimension with affine parameters.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::NotAMatrix {
                op: "layer_norm",
                lhs: shape,
                rhs: vec![],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut data = vec![E::ZERO; rows * cols];
        let mut saved = Vec::with_capacity(rows * 2);
        for r in 0..rows {
            let x_row = &src[r * cols..(r + 1) * cols];
            let mut mean = 0.0_f64;
            for &v in x_row {
                mean += v.to_f64();
            }
            mean /= cols as f64;
            let mut var = 0.0_f64;
            for &v in x_row {
                let d = v.to_f64() - mean;
                var += d * d;
            }
            var /= cols as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            let (me, re) = (E::from_f64(mean), E::from_f64(rstd));
            let out_row = &mut data[r * cols..(r + 1) * cols];
            for c in 0..cols {
                out_row[c] = (x_row[c] - me) * re * g[c] + b[c];
            }
            saved.push(me);
            saved.push(re);
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let id = self.push(
            data,
            vec![rows, cols],
            Op::LayerNorm { x, gamma, beta, rows, cols, eps },
            needs,
        );
        self.nodes[id.0].saved = saved;
        Ok(id)
    }

    /// Strided 1-D convolution over `[frames, channels]` with weights
    /// `[c_out, k, c_in]` and per-channel bias.
    pub fn conv1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId, TensorError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 3 || xs[1] != ws[2] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (t_in, c_in) = (xs[0], xs[1]);
        let (c_out, k) = (ws[0], ws[1]);
        if self.shape(b) != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: vec![c_out],
                rhs: self.shape(b).to_vec(),
            });
        }
        let t_out = kernels::conv1d_out_len(t_in, k, stride, pad)
            .ok_or(TensorError::EmptyDim { op: "conv1d" })?;
        let dims = ConvDims { t_in, c_in, t_out, c_out, k };
        let mut out = vec![E::ZERO; t_out * c_out];
        kernels::conv1d_forward(
            &self.nodes[x.0].data,
            &self.nodes[w.0].data,
            &self.nodes[b.0].data,
            stride,
            pad,
            dims,
            &mut out,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            out,
            vec![t_out, c_out],
            Op::Conv1d { x, w, b, stride, pad, dims },
            needs,
        ))
    }

    /// Transposed 1-D convolution, weights `[k, c_in, c_out]`.
    pub fn convt1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId, TensorError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "convt1d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (t_in, c_in) = (xs[0], xs[1]);
        let (k, c_out) = (ws[0], ws[2]);
        if self.shape(b) != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "convt1d",
                lhs: vec![c_out],
                rhs: self.shape(b).to_vec(),
            });
        }
        let t_out = kernels::convt1d_out_len(t_in, k, stride, pad)
            .ok_or(TensorError::EmptyDim { op: "convt1d" })?;
        let dims = ConvDims { t_in, c_in, t_out, c_out, k };
        let mut out = vec![E::ZERO; t_out * c_out];
        kernels::convt1d_forward(
            &self.nodes[x.0].data,
            &self.nodes[w.0].data,
            &self.nodes[b.0].data,
            stride,
            pad,
            dims,
            &mut out,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            out,
            vec![t_out, c_out],
            Op::ConvT1d { x, w, b, stride, pad, dims },
            needs,
        ))
    }

    /// Gather rows of `table[v × d]` at `idx`.
    pub fn embed(&mut self, table: TensorId, idx: &[usize]) -> Result<TensorId, TensorError> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(TensorError::NotAMatrix {
                op: "embed",
                lhs: ts,
                rhs: vec![],
            });
        }
        let (v, d) = (ts[0], ts[1]);
        if v == 0 {
            return Err(TensorError::EmptyDim { op: "embed" });
        }
        for &i in idx {
            if i >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "embed",
                    index: i,
                    bound: v,
                });
            }
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.nodes[table.0].data[i * d..(i + 1) * d]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            data,
            vec![idx.len(), d],
            Op::Embed { table, idx: idx.to_vec(), dim: d },
            needs,
        ))
    }

    /// Mean negative log-likelihood over supervised rows; `targets[r] == -1`
    /// excludes row `r`. Operates on unnormalized logits.
    pub fn cross_entropy_mean(
        &mut self,
        logits: TensorId,
        targets: &[i64],
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::NotAMatrix {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let mut count = 0usize;
        for &t in targets {
            if t >= 0 {
                if t as usize >= cols {
                    return Err(TensorError::IndexOutOfRange {
                        op: "cross_entropy",
                        index: t as usize,
                        bound: cols,
                    });
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(TensorError::NoSupervisedPositions);
        }
        let src = &self.nodes[logits.0].data;
        let mut saved = vec![E::ZERO; rows * cols];
        let mut total = 0.0_f64;
        for r in 0..rows {
            if targets[r] < 0 {
                continue;
            }
            let x_row = &src[r * cols..(r + 1) * cols];
            let mut mx = x_row[0];
            for &v in x_row.iter().skip(1) {
                mx = mx.maxv(v);
            }
            let mut sum = 0.0_f64;
            for &v in x_row {
                sum += (v - mx).to_f64().exp();
            }
            let lse = mx.to_f64() + sum.ln();
            total += lse - x_row[targets[r] as usize].to_f64();
            let p_row = &mut saved[r * cols..(r + 1) * cols];
            for c in 0..cols {
                p_row[c] = E::from_f64((x_row[c] - mx).to_f64().exp() / sum);
            }
        }
        let loss = E::from_f64(total / count as f64);
        let needs = self.needs(logits);
        let id = self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropyMean {
                logits,
                targets: targets.to_vec(),
                rows,
                cols,
                count,
            },
            needs,
        );
        self.nodes[id.0].saved = saved;
        Ok(id)
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let mut acc = 0.0_f64;
        for &v in &self.nodes[a.0].data {
            acc += v.to_f64();
        }
        let needs = self.needs(a);
        self.push(vec![E::from_f64(acc)], vec![1], Op::SumAll { a }, needs)
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.nodes[a.0].data.len();
        let mut acc = 0.0_f64;
        for &v in &self.nodes[a.0].data {
            acc += v.to_f64();
        }
        let needs = self.needs(a);
        self.push(
            vec![E::from_f64(acc / n as f64)],
            vec![1],
            Op::MeanAll { a },
            needs,
        )
    }

    /// Column means of a `[rows × cols]` tensor.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::NotAMatrix {
                op: "mean_rows",
                lhs: shape,
                rhs: vec![],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let src = &self.nodes[a.0].data;
        let mut acc = vec![0.0_f64; cols];
        for r in 0..rows {
            for c in 0..cols {
                acc[c] += src[r * cols + c].to_f64();
            }
        }
        let data: Vec<E> = acc.iter().map(|&v| E::from_f64(v / rows as f64)).collect();
        let needs = self.needs(a);
        Ok(self.push(data, vec![cols], Op::MeanRows { a, rows, cols }, needs))
    }

    /// Non-overlapping window mean over rows; `rows` must divide by `window`.
    pub fn avg_pool_rows(&mut self, a: TensorId, window: usize) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || window == 0 || shape[0] % window != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "avg_pool_rows",
                lhs: shape,
                rhs: vec![window],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let rows_out = rows / window;
        let src = &self.nodes[a.0].data;
        let mut data = vec![E::ZERO; rows_out * cols];
        for o in 0..rows_out {
            for c in 0..cols {
                let mut acc = 0.0_f64;
                for i in 0..window {
                    acc += src[(o * window + i) * cols + c].to_f64();
                }
                data[o * cols + c] = E::from_f64(acc / window as f64);
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            data,
            vec![rows_out, cols],
            Op::AvgPoolRows { a, window, rows_out, cols },
            needs,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyDim { op: "concat_cols" });
        }
        let rows = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![E::ZERO; rows * total];
        let mut off = 0;
        for (pi, &p) in parts.iter().enumerate() {
            let w = widths[pi];
            let src = &self.nodes[p.0].data;
            for r in 0..rows {
                data[r * total + off..r * total + off + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            data,
            vec![rows, total],
            Op::ConcatCols { parts: parts.to_vec(), widths, rows },
            needs,
        ))
    }

    /// Stack matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyDim { op: "concat_rows" });
        }
        let cols = self.shape(parts[0])[1];
        let mut heights = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            heights.push(s[0]);
        }
        let total: usize = heights.iter().sum();
        let mut data = Vec::with_capacity(total * cols);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            data,
            vec![total, cols],
            Op::ConcatRows { parts: parts.to_vec(), heights, cols },
            needs,
        ))
    }

    pub fn slice_cols(
        &mut self,
        a: TensorId,
        start: usize,
        len: usize,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || start + len > shape[1] {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: *shape.last().unwrap_or(&0),
            });
        }
        let (rows, cols_in) = (shape[0], shape[1]);
        let src = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols_in + start..r * cols_in + start + len]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            data,
            vec![rows, len],
            Op::SliceCols { a, start, len, cols_in, rows },
            needs,
        ))
    }

    pub fn slice_rows(
        &mut self,
        a: TensorId,
        start: usize,
        len: usize,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || start + len > shape[0] {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                bound: shape.first().copied().unwrap_or(0),
            });
        }
        let cols = shape[1];
        let data = self.nodes[a.0].data[start * cols..(start + len) * cols].to_vec();
        let needs = self.needs(a);
        Ok(self.push(data, vec![len, cols], Op::SliceRows { a, start, len, cols }, needs))
    }

    pub fn repeat_row(&mut self, row: TensorId, n: usize) -> Result<TensorId, TensorError> {
        let shape = self.shape(row).to_vec();
        let cols = numel(&shape);
        let mut data = Vec::with_capacity(n * cols);
        for _ in 0..n {
            data.extend_from_slice(&self.nodes[row.0].data);
        }
        let needs = self.needs(row);
        Ok(self.push(data, vec![n, cols], Op::RepeatRow { row, n, cols }, needs))
    }

    /// Additive causal mask on a square score matrix: position `q` sees keys
    /// `k <= q`.
    pub fn causal_mask(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(TensorError::NotAMatrix {
                op: "causal_mask",
                lhs: shape,
                rhs: vec![],
            });
        }
        let rows = shape[0];
        let src = &self.nodes[a.0].data;
        let ninf = E::from_f64(NEG_INF);
        let mut data = vec![E::ZERO; rows * rows];
        for q in 0..rows {
            for k in 0..rows {
                data[q * rows + k] = if k <= q { src[q * rows + k] } else { ninf };
            }
        }
        let needs = self.needs(a);
        Ok(self.push(data, shape, Op::CausalMask { a, rows }, needs))
    }

    /// Additive key mask: hidden key columns are forced to -1e9 before softmax.
    pub fn key_mask(&mut self, a: TensorId, visible: &[bool]) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || shape[1] != visible.len() {
            return Err(TensorError::ShapeMismatch {
                op: "key_mask",
                lhs: shape,
                rhs: vec![visible.len()],
            });
        }
        if !visible.iter().any(|&v| v) {
            return Err(TensorError::EmptyDim { op: "key_mask" });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let src = &self.nodes[a.0].data;
        let ninf = E::from_f64(NEG_INF);
        let mut data = vec![E::ZERO; rows * cols];
        for q in 0..rows {
            for k in 0..cols {
                data[q * cols + k] = if visible[k] { src[q * cols + k] } else { ninf };
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            data,
            shape,
            Op::KeyMask { a, visible: visible.to_vec(), rows },
            needs,
        ))
    }

    /// Post-softmax column multiply by a 0/1 mask (compatibility mode; breaks
    /// row normalization by design of the flag).
    pub fn col_mask01(&mut self, a: TensorId, visible: &[bool]) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || shape[1] != visible.len() {
            return Err(TensorError::ShapeMismatch {
                op: "col_mask01",
                lhs: shape,
                rhs: vec![visible.len()],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let src = &self.nodes[a.0].data;
        let mut data = vec![E::ZERO; rows * cols];
        for q in 0..rows {
            for k in 0..cols {
                if visible[k] {
                    data[q * cols + k] = src[q * cols + k];
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            data,
            shape,
            Op::ColMask01 { a, visible: visible.to_vec(), rows },
            needs,
        ))
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&mut self, a: TensorId, new_shape: Vec<usize>) -> Result<TensorId, TensorError> {
        if numel(&new_shape) != self.nodes[a.0].data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: new_shape,
            });
        }
        let data = self.nodes[a.0].data.clone();
        let needs = self.needs(a);
        Ok(self.push(data, new_shape, Op::Reshape { a }, needs))
    }

    /// Forward copy that blocks gradient flow.
    pub fn detach(&mut self, a: TensorId) -> TensorId {
        let data = self.nodes[a.0].data.clone();
        let shape = self.shape(a).to_vec();
        self.push(data, shape, Op::Detach { a }, false)
    }

    /// Straight-through estimator: forward takes `hard` verbatim, backward
    /// passes the gradient to `soft` unchanged.
    pub fn straight_through(
        &mut self,
        soft: TensorId,
        hard: Vec<E>,
    ) -> Result<TensorId, TensorError> {
        if hard.len() != self.nodes[soft.0].data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "straight_through",
                lhs: self.shape(soft).to_vec(),
                rhs: vec![hard.len()],
            });
        }
        let shape = self.shape(soft).to_vec();
        let needs = self.needs(soft);
        Ok(self.push(hard, shape, Op::StIdentity { soft }, needs))
    }

    /// Reverse sweep from a scalar loss node. Gradients land in each node's
    /// `grad` buffer; use `grad()` / `collect_param_grads()` to read them.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NotScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<E>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![E::ONE]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.apply_backward(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.into_iter().enumerate() {
            self.nodes[i].grad = g;
        }
        Ok(())
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<E>>],
        id: TensorId,
        f: impl FnOnce(&mut Vec<E>),
    ) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![E::ZERO; self.nodes[id.0].data.len()]);
        }
        f(slot.as_mut().unwrap());
    }

    fn apply_backward(&self, i: usize, g: &[E], grads: &mut [Option<Vec<E>>]) {
        // Ops clone their metadata out of the node so the borrow of `self`
        // stays shared while gradient buffers are mutated.
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b, ta, tb, m, k, n } => {
                let (adata, bdata) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
                self.accumulate(grads, a, |da| {
                    if !ta {
                        // dA[m,k] = dC (m×n) · B_logicalᵀ
                        kernels::matmul(g, bdata, false, !tb, m, n, k, da, true);
                    } else {
                        // a physical [k,m]: dA = B_logical · dCᵀ
                        kernels::matmul(bdata, g, tb, true, k, n, m, da, true);
                    }
                });
                self.accumulate(grads, b, |db| {
                    if !tb {
                        // dB[k,n] = A_logicalᵀ · dC
                        kernels::matmul(adata, g, !ta, false, k, m, n, db, true);
                    } else {
                        // b physical [n,k]: dB = dCᵀ · A_logical
                        kernels::matmul(g, adata, true, ta, n, m, k, db, true);
                    }
                });
            }
            Op::AddSame { a, b } => {
                self.accumulate(grads, a, |da| {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accumulate(grads, b, |db| {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::SubSame { a, b } => {
                self.accumulate(grads, a, |da| {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accumulate(grads, b, |db| {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d += -gv;
                    }
                });
            }
            Op::MulSame { a, b } => {
                let (adata, bdata) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
                self.accumulate(grads, a, |da| {
                    for j in 0..g.len() {
                        da[j] += g[j] * bdata[j];
                    }
                });
                self.accumulate(grads, b, |db| {
                    for j in 0..g.len() {
                        db[j] += g[j] * adata[j];
                    }
                });
            }
            Op::AddBiasRow { x, bias, rows, cols } => {
                self.accumulate(grads, x, |dx| {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accumulate(grads, bias, |db| {
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += g[r * cols + c];
                        }
                    }
                });
            }
            Op::AddScalarT { x, s } => {
                self.accumulate(grads, x, |dx| {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accumulate(grads, s, |ds| {
                    let mut acc = E::ZERO;
                    for &gv in g {
                        acc += gv;
                    }
                    ds[0] += acc;
                });
            }
            Op::Scale { a, c } => {
                let ce = E::from_f64(c);
                self.accumulate(grads, a, |da| {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv * ce;
                    }
                });
            }
            Op::AddConst { a } => {
                self.accumulate(grads, a, |da| {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::Relu { a } => {
                let adata = &self.nodes[a.0].data;
                self.accumulate(grads, a, |da| {
                    for j in 0..g.len() {
                        if adata[j] > E::ZERO {
                            da[j] += g[j];
                        }
                    }
                });
            }
            Op::Gelu { a } => {
                let adata = &self.nodes[a.0].data;
                self.accumulate(grads, a, |da| {
                    for j in 0..g.len() {
                        da[j] += g[j] * gelu_derivative(adata[j]);
                    }
                });
            }
            Op::Sigmoid { a } => {
                let ydata = &self.nodes[i].data;
                self.accumulate(grads, a, |da| {
                    for j in 0..g.len() {
                        let y = ydata[j];
                        da[j] += g[j] * y * (E::ONE - y);
                    }
                });
            }
            Op::Softplus { a } => {
                let adata = &self.nodes[a.0].data;
                self.accumulate(grads, a, |da| {
                    for j in 0..g.len() {
                        da[j] += g[j] * sigmoid_forward(adata[j]);
                    }
                });
            }
            Op::Abs { a } => {
                let adata = &self.nodes[a.0].data;
                self.accumulate(grads, a, |da| {
                    for j in 0..g.len() {
                        let s = if adata[j] > E::ZERO {
                            E::ONE
                        } else if adata[j] < E::ZERO {
                            -E::ONE
                        } else {
                            E::ZERO
                        };
                        da[j] += g[j] * s;
                    }
                });
            }
            Op::Ln { a } => {
                let adata = &self.nodes[a.0].data;
                self.accumulate(grads, a, |da| {
                    for j in 0..g.len() {
                        da[j] += g[j] / adata[j];
                    }
                });
            }
            Op::ClampMin { a, c } => {
                let ce = E::from_f64(c);
                let adata = &self.nodes[a.0].data;
                self.accumulate(grads, a, |da| {
                    for j in 0..g.len() {
                        if adata[j] >= ce {
                            da[j] += g[j];
                        }
                    }
                });
            }
            Op::SoftmaxLast { a, rows, cols } => {
                let y = &self.nodes[i].data;
                self.accumulate(grads, a, |da| {
                    for r in 0..rows {
                        let y_row = &y[r * cols..(r + 1) * cols];
                        let g_row = &g[r * cols..(r + 1) * cols];
                        let mut dot = 0.0_f64;
                        for c in 0..cols {
                            dot += (g_row[c] * y_row[c]).to_f64();
                        }
                        let dot = E::from_f64(dot);
                        let da_row = &mut da[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            da_row[c] += y_row[c] * (g_row[c] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, rows, cols, eps: _ } => {
                let xdata = &self.nodes[x.0].data;
                let gdata = &self.nodes[gamma.0].data;
                let saved = &self.nodes[i].saved;
                self.accumulate(grads, x, |dx| {
                    for r in 0..rows {
                        let (mean, rstd) = (saved[2 * r], saved[2 * r + 1]);
                        let x_row = &xdata[r * cols..(r + 1) * cols];
                        let g_row = &g[r * cols..(r + 1) * cols];
                        let mut sum_dxhat = 0.0_f64;
                        let mut sum_dxhat_xhat = 0.0_f64;
                        for c in 0..cols {
                            let xhat = ((x_row[c] - mean) * rstd).to_f64();
                            let dxhat = (g_row[c] * gdata[c]).to_f64();
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        let inv_n = 1.0 / cols as f64;
                        let dx_row = &mut dx[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            let xhat = ((x_row[c] - mean) * rstd).to_f64();
                            let dxhat = (g_row[c] * gdata[c]).to_f64();
                            let v = rstd.to_f64()
                                * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                            dx_row[c] += E::from_f64(v);
                        }
                    }
                });
                self.accumulate(grads, gamma, |dg| {
                    for r in 0..rows {
                        let (mean, rstd) = (saved[2 * r], saved[2 * r + 1]);
                        for c in 0..cols {
                            let xhat = (xdata[r * cols + c] - mean) * rstd;
                            dg[c] += g[r * cols + c] * xhat;
                        }
                    }
                });
                self.accumulate(grads, beta, |db| {
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += g[r * cols + c];
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b, stride, pad, dims } => {
                let xdata = &self.nodes[x.0].data;
                let wdata = &self.nodes[w.0].data;
                let nx = self.nodes[x.0].needs_grad;
                let nw = self.nodes[w.0].needs_grad;
                let nb = self.nodes[b.0].needs_grad;
                let mut dx = nx.then(|| vec![E::ZERO; xdata.len()]);
                let mut dw = nw.then(|| vec![E::ZERO; wdata.len()]);
                let mut db = nb.then(|| vec![E::ZERO; dims.c_out]);
                kernels::conv1d_backward(
                    xdata,
                    wdata,
                    stride,
                    pad,
                    dims,
                    g,
                    dx.as_mut(),
                    dw.as_mut(),
                    db.as_mut(),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, x, |dst| add_into(dst, &dx));
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, w, |dst| add_into(dst, &dw));
                }
                if let Some(db) = db {
                    self.accumulate(grads, b, |dst| add_into(dst, &db));
                }
            }
            Op::ConvT1d { x, w, b, stride, pad, dims } => {
                let xdata = &self.nodes[x.0].data;
                let wdata = &self.nodes[w.0].data;
                let nx = self.nodes[x.0].needs_grad;
                let nw = self.nodes[w.0].needs_grad;
                let nb = self.nodes[b.0].needs_grad;
                let mut dx = nx.then(|| vec![E::ZERO; xdata.len()]);
                let mut dw = nw.then(|| vec![E::ZERO; wdata.len()]);
                let mut db = nb.then(|| vec![E::ZERO; dims.c_out]);
                kernels::convt1d_backward(
                    xdata,
                    wdata,
                    stride,
                    pad,
                    dims,
                    g,
                    dx.as_mut(),
                    dw.as_mut(),
                    db.as_mut(),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, x, |dst| add_into(dst, &dx));
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, w, |dst| add_into(dst, &dw));
                }
                if let Some(db) = db {
                    self.accumulate(grads, b, |dst| add_into(dst, &db));
                }
            }
            Op::Embed { table, idx, dim } => {
                self.accumulate(grads, table, |dt| {
                    for (r, &src_row) in idx.iter().enumerate() {
                        for c in 0..dim {
                            dt[src_row * dim + c] += g[r * dim + c];
                        }
                    }
                });
            }
            Op::CrossEntropyMean { logits, targets, rows, cols, count } => {
                let probs = &self.nodes[i].saved;
                let scale = g[0] * E::from_f64(1.0 / count as f64);
                self.accumulate(grads, logits, |dl| {
                    for r in 0..rows {
                        if targets[r] < 0 {
                            continue;
                        }
                        let t = targets[r] as usize;
                        for c in 0..cols {
                            let ind = if c == t { E::ONE } else { E::ZERO };
                            dl[r * cols + c] += scale * (probs[r * cols + c] - ind);
                        }
                    }
                });
            }
            Op::SumAll { a } => {
                let gv = g[0];
                self.accumulate(grads, a, |da| {
                    for d in da.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::MeanAll { a } => {
                let n = self.nodes[a.0].data.len();
                let gv = g[0] * E::from_f64(1.0 / n as f64);
                self.accumulate(grads, a, |da| {
                    for d in da.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::MeanRows { a, rows, cols } => {
                let inv = E::from_f64(1.0 / rows as f64);
                self.accumulate(grads, a, |da| {
                    for r in 0..rows {
                        for c in 0..cols {
                            da[r * cols + c] += g[c] * inv;
                        }
                    }
                });
            }
            Op::AvgPoolRows { a, window, rows_out, cols } => {
                let inv = E::from_f64(1.0 / window as f64);
                self.accumulate(grads, a, |da| {
                    for o in 0..rows_out {
                        for iw in 0..window {
                            for c in 0..cols {
                                da[(o * window + iw) * cols + c] += g[o * cols + c] * inv;
                            }
                        }
                    }
                });
            }
            Op::ConcatCols { parts, widths, rows } => {
                let total: usize = widths.iter().sum();
                let mut off = 0;
                for (pi, &p) in parts.iter().enumerate() {
                    let w = widths[pi];
                    self.accumulate(grads, p, |dp| {
                        for r in 0..rows {
                            for c in 0..w {
                                dp[r * w + c] += g[r * total + off + c];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows { parts, heights, cols } => {
                let mut off = 0;
                for (pi, &p) in parts.iter().enumerate() {
                    let h = heights[pi];
                    self.accumulate(grads, p, |dp| {
                        dp[..h * cols].iter_mut()
                            .zip(&g[off * cols..(off + h) * cols])
                            .for_each(|(d, &gv)| *d += gv);
                    });
                    off += h;
                }
            }
            Op::SliceCols { a, start, len, cols_in, rows } => {
                self.accumulate(grads, a, |da| {
                    for r in 0..rows {
                        for c in 0..len {
                            da[r * cols_in + start + c] += g[r * len + c];
                        }
                    }
                });
            }
            Op::SliceRows { a, start, len, cols } => {
                self.accumulate(grads, a, |da| {
                    da[start * cols..(start + len) * cols]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &gv)| *d += gv);
                });
            }
            Op::RepeatRow { row, n, cols } => {
                self.accumulate(grads, row, |dr| {
                    for r in 0..n {
                        for c in 0..cols {
                            dr[c] += g[r * cols + c];
                        }
                    }
                });
            }
            Op::CausalMask { a, rows } => {
                self.accumulate(grads, a, |da| {
                    for q in 0..rows {
                        for k in 0..=q {
                            da[q * rows + k] += g[q * rows + k];
                        }
                    }
                });
            }
            Op::KeyMask { a, visible, rows } => {
                let cols = visible.len();
                self.accumulate(grads, a, |da| {
                    for q in 0..rows {
                        for k in 0..cols {
                            if visible[k] {
                                da[q * cols + k] += g[q * cols + k];
                            }
                        }
                    }
                });
            }
            Op::ColMask01 { a, visible, rows } => {
                let cols = visible.len();
                self.accumulate(grads, a, |da| {
                    for q in 0..rows {
                        for k in 0..cols {
                            if visible[k] {
                                da[q * cols + k] += g[q * cols + k];
                            }
                        }
                    }
                });
            }
            Op::Reshape { a } => {
                self.accumulate(grads, a, |da| add_into(da, g));
            }
            Op::Detach { .. } => {}
            Op::StIdentity { soft } => {
                self.accumulate(grads, soft, |ds| add_into(ds, g));
            }
        }
    }
}

fn add_into<E: Scalar>(dst: &mut [E], src: &[E]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn gelu_forward<E: Scalar>(x: E) -> E {
    // tanh approximation of the Gaussian error linear unit
    let c0 = E::from_f64(0.7978845608028654); // sqrt(2/pi)
    let c1 = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let u = c0 * (x + c1 * x * x * x);
    half * x * (E::ONE + u.tanh())
}

fn gelu_derivative<E: Scalar>(x: E) -> E {
    let c0 = E::from_f64(0.7978845608028654);
    let c1 = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    let sech2 = E::ONE - t * t;
    half * (E::ONE + t) + half * x * sech2 * c0 * (E::ONE + three * c1 * x * x)
}

fn sigmoid_forward<E: Scalar>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

fn softplus_forward<E: Scalar>(x: E) -> E {
    // max(x, 0) + ln(1 + exp(-|x|))
    x.maxv(E::ZERO) + (E::ONE + (-x.abs()).exp()).ln()
}
