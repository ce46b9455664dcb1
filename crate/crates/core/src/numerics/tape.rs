use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{NumericsError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Log(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Pick {
        x: Var,
        cols: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        segments: Vec<(usize, usize)>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records operations in execution order so that `backward` can replay them
/// in reverse. A tape lives for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the variable is untracked or not reached from the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Exact GeLU, `x · Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

const LAYER_NORM_EPS: f64 = 1e-5;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: m×k`, `b: n×k`.
fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c += aᵀ · b` for `a: k×m`, `b: k×n`.
fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Records an input. Gradients are only accumulated for tracked leaves
    /// and the nodes that depend on them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let t = self.tracked(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), t))
    }

    /// `a · bᵀ`; avoids materialising the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        if tb.cols() != k {
            return Err(shape_err("matmul_t", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let t = self.tracked(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulT(a, b), t))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let t = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let t = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), t))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let cols = ta.cols();
        if tb.numel() != cols {
            return Err(shape_err("add_row", ta, tb));
        }
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(cols.max(1)) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), out)?;
        let t = self.tracked(&[a, bias]);
        Ok(self.push(out, Op::AddRow(a, bias), t))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|v| v * s).collect(),
        };
        let t = self.tracked(&[a]);
        self.push(out, Op::Scale(a, s), t)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let cols = ta.cols();
        let mut out = vec![0.0; ta.numel()];
        for (x, o) in ta.data().chunks(cols.max(1)).zip(out.chunks_mut(cols.max(1))) {
            softmax_row(x, o);
        }
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data: out,
        };
        let t = self.tracked(&[a]);
        self.push(out, Op::SoftmaxRows(a), t)
    }

    /// Numerically stable `log(softmax(x))` per row.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let cols = ta.cols();
        let mut out = vec![0.0; ta.numel()];
        for (x, o) in ta.data().chunks(cols.max(1)).zip(out.chunks_mut(cols.max(1))) {
            let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (ov, &xv) in o.iter_mut().zip(x) {
                *ov = xv - lse;
            }
        }
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data: out,
        };
        let t = self.tracked(&[a]);
        self.push(out, Op::LogSoftmaxRows(a), t)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|v| v.ln()).collect(),
        };
        let t = self.tracked(&[a]);
        self.push(out, Op::Log(a), t)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|&v| gelu(v)).collect(),
        };
        let t = self.tracked(&[a]);
        self.push(out, Op::Gelu(a), t)
    }

    /// Row-wise layer norm with learned scale and shift (epsilon 1e-5).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let cols = tx.cols();
        if tg.numel() != cols {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if tb.numel() != cols {
            return Err(shape_err("layer_norm", tx, tb));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..cols {
                let h = (row[j] - mean) * rs;
                xhat[r * cols + j] = h;
                out[r * cols + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let t = self.tracked(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            t,
        ))
    }

    /// Gathers rows of `table`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (rows, cols) = (tt.rows(), tt.cols());
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(NumericsError::Index {
                    op: "embedding",
                    index: id,
                    extent: rows,
                });
            }
            out.extend_from_slice(tt.row_slice(id));
        }
        let out = Tensor::matrix(ids.len(), cols, out)?;
        let t = self.tracked(&[table]);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            t,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::matrix(rows, total, out)?;
        let t = self.tracked(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), t))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), self.value(p)));
            }
        }
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
            rows += self.value(p).rows();
        }
        let out = Tensor::matrix(rows, cols, out)?;
        let t = self.tracked(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), t))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        if start + len > cols {
            return Err(NumericsError::Index {
                op: "slice_cols",
                index: start + len,
                extent: cols,
            });
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&tx.row_slice(r)[start..start + len]);
        }
        let out = Tensor::matrix(rows, len, out)?;
        let t = self.tracked(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, t))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        if start + len > rows {
            return Err(NumericsError::Index {
                op: "slice_rows",
                index: start + len,
                extent: rows,
            });
        }
        let out = tx.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::matrix(len, cols, out)?;
        let t = self.tracked(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, t))
    }

    /// Masked select over rows: keeps `rows` in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (n, cols) = (tx.rows(), tx.cols());
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(NumericsError::Index {
                    op: "select_rows",
                    index: r,
                    extent: n,
                });
            }
            out.extend_from_slice(tx.row_slice(r));
        }
        let out = Tensor::matrix(rows.len(), cols, out)?;
        let t = self.tracked(&[x]);
        Ok(self.push(
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            t,
        ))
    }

    /// Mean over axis 0 (giving `1×cols`) or axis 1 (giving `rows×1`).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        let out = match axis {
            0 => {
                let mut o = vec![0.0; cols];
                for r in 0..rows {
                    for (ov, v) in o.iter_mut().zip(tx.row_slice(r)) {
                        *ov += v;
                    }
                }
                o.iter_mut().for_each(|v| *v /= rows as f64);
                Tensor::matrix(1, cols, o)?
            }
            1 => {
                let o = (0..rows)
                    .map(|r| tx.row_slice(r).iter().sum::<f64>() / cols as f64)
                    .collect();
                Tensor::matrix(rows, 1, o)?
            }
            _ => {
                return Err(NumericsError::Index {
                    op: "mean_axis",
                    index: axis,
                    extent: 2,
                })
            }
        };
        let t = self.tracked(&[x]);
        Ok(self.push(out, Op::MeanAxis { x, axis }, t))
    }

    /// One element per row: `out[i] = x[i, cols[i]]`, shape `rows×1`.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if cols.len() != tx.rows() {
            return Err(NumericsError::Shape {
                op: "pick",
                left: tx.shape().to_vec(),
                right: vec![cols.len()],
            });
        }
        let mut out = Vec::with_capacity(cols.len());
        for (r, &c) in cols.iter().enumerate() {
            if c >= tx.cols() {
                return Err(NumericsError::Index {
                    op: "pick",
                    index: c,
                    extent: tx.cols(),
                });
            }
            out.push(tx.get(r, c));
        }
        let out = Tensor::matrix(cols.len(), 1, out)?;
        let t = self.tracked(&[x]);
        Ok(self.push(
            out,
            Op::Pick {
                x,
                cols: cols.to_vec(),
            },
            t,
        ))
    }

    /// Row `i` of the output is the mean of rows `start..start + len` of `x`
    /// for the `i`-th `(start, len)` segment. Segments must be non-empty.
    pub fn segment_mean(&mut self, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        let mut out = Vec::with_capacity(segments.len() * cols);
        for &(start, len) in segments {
            if len == 0 || start + len > rows {
                return Err(NumericsError::Index {
                    op: "segment_mean",
                    index: start + len.max(1),
                    extent: rows,
                });
            }
            let mut acc = vec![0.0; cols];
            for r in start..start + len {
                acc.iter_mut().zip(tx.row_slice(r)).for_each(|(a, v)| *a += v);
            }
            out.extend(acc.into_iter().map(|v| v / len as f64));
        }
        let out = Tensor::matrix(segments.len(), cols, out)?;
        let t = self.tracked(&[x]);
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                segments: segments.to_vec(),
            },
            t,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        let t = self.tracked(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), t)
    }

    /// Reverse pass from a scalar `loss`. Every tracked node reachable from
    /// the loss is visited exactly once, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NumericsError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].tracked {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(buf);
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |da| gemm_nt_acc(g, tb.data(), da, m, n, k));
                acc(*b, &mut |db| gemm_tn_acc(ta.data(), g, db, m, k, n));
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                acc(*a, &mut |da| gemm_acc(g, tb.data(), da, m, n, k));
                acc(*b, &mut |db| gemm_tn_acc(g, ta.data(), db, m, n, k));
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(*v, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddRow(a, b) => {
                let cols = out.cols();
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |d| {
                    for row in g.chunks(cols.max(1)) {
                        d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |d| {
                    for ((x, y), o) in d.iter_mut().zip(g).zip(tb.data()) {
                        *x += y * o;
                    }
                });
                acc(*b, &mut |d| {
                    for ((x, y), o) in d.iter_mut().zip(g).zip(ta.data()) {
                        *x += y * o;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)),
            Op::SoftmaxRows(a) => {
                let cols = out.cols().max(1);
                acc(*a, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((dv, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *dv += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let cols = out.cols().max(1);
                acc(*a, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                        let gsum: f64 = gr.iter().sum();
                        for ((dv, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *dv += gv - yv.exp() * gsum;
                        }
                    }
                });
            }
            Op::Log(a) => {
                let ta = &nodes[a.0].value;
                acc(*a, &mut |d| {
                    for ((dv, gv), xv) in d.iter_mut().zip(g).zip(ta.data()) {
                        *dv += gv / xv;
                    }
                });
            }
            Op::Gelu(a) => {
                let ta = &nodes[a.0].value;
                acc(*a, &mut |d| {
                    for ((dv, gv), &xv) in d.iter_mut().zip(g).zip(ta.data()) {
                        *dv += gv * gelu_grad(xv);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = out.cols();
                let tg = &nodes[gamma.0].value;
                acc(*beta, &mut |d| {
                    for row in g.chunks(cols) {
                        d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
                acc(*gamma, &mut |d| {
                    for (row, hrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((dv, gv), hv) in d.iter_mut().zip(row).zip(hrow) {
                            *dv += gv * hv;
                        }
                    }
                });
                acc(*x, &mut |d| {
                    let n = cols as f64;
                    for (r, ((drow, grow), hrow)) in d
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(xhat.chunks(cols))
                        .enumerate()
                    {
                        let dxhat: Vec<f64> = grow.iter().zip(tg.data()).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            drow[j] += rstd[r] / n * (n * dxhat[j] - s1 - hrow[j] * s2);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let cols = out.cols();
                acc(*table, &mut |d| {
                    for (i, &id) in ids.iter().enumerate() {
                        let src = &g[i * cols..(i + 1) * cols];
                        d[id * cols..(id + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    acc(*p, &mut |d| {
                        for (r, drow) in d.chunks_mut(w.max(1)).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + w];
                            drow.iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.numel();
                    acc(*p, &mut |d| {
                        d.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(x, y)| *x += y)
                    });
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let (w, cols) = (out.cols(), nodes[x.0].value.cols());
                acc(*x, &mut |d| {
                    for (r, grow) in g.chunks(w.max(1)).enumerate() {
                        d[r * cols + start..r * cols + start + w]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let cols = out.cols();
                acc(*x, &mut |d| {
                    d[start * cols..start * cols + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, b)| *a += b)
                });
            }
            Op::SelectRows { x, rows } => {
                let cols = out.cols();
                acc(*x, &mut |d| {
                    for (i, &r) in rows.iter().enumerate() {
                        d[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(&g[i * cols..(i + 1) * cols])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::MeanAxis { x, axis } => {
                let tx = &nodes[x.0].value;
                let (rows, cols) = (tx.rows(), tx.cols());
                acc(*x, &mut |d| {
                    for r in 0..rows {
                        for c in 0..cols {
                            d[r * cols + c] += if *axis == 0 {
                                g[c] / rows as f64
                            } else {
                                g[r] / cols as f64
                            };
                        }
                    }
                });
            }
            Op::Pick { x, cols } => {
                let w = nodes[x.0].value.cols();
                acc(*x, &mut |d| {
                    for (r, &c) in cols.iter().enumerate() {
                        d[r * w + c] += g[r];
                    }
                });
            }
            Op::SegmentMean { x, segments } => {
                let cols = out.cols();
                acc(*x, &mut |d| {
                    for (i, &(start, len)) in segments.iter().enumerate() {
                        let src = &g[i * cols..(i + 1) * cols];
                        for r in start..start + len {
                            d[r * cols..(r + 1) * cols]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b / len as f64);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
        }
    }
}
