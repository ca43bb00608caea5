//! Tape-based reverse-mode automatic differentiation over [`Tensor`].
//!
//! A [`Tape`] is rebuilt for every forward pass: callers push leaves
//! (parameters and inputs), chain operations through the builder methods, and
//! call [`Tape::backward`] on a scalar loss. Every node then holds a gradient
//! buffer of the same shape as its value. Shape validation happens eagerly at
//! record time so a malformed graph never reaches backward.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Debug)]
enum Op {
    MatMul { a: Value, b: Value, out: Value },
    /// Elementwise add; one side may be a single-element tensor.
    Add { a: Value, b: Value, out: Value },
    Sub { a: Value, b: Value, out: Value },
    /// Elementwise multiply; one side may be a single-element tensor.
    Mul { a: Value, b: Value, out: Value },
    Scale { a: Value, c: f64, out: Value },
    Sigmoid { a: Value, out: Value },
    Relu { a: Value, out: Value },
    Softmax { a: Value, axis: usize, out: Value },
    Conv2d { x: Value, w: Value, b: Value, stride: usize, pad: usize, out: Value },
    AdaptiveAvgPool { x: Value, out: Value },
    Bilinear { x: Value, out: Value },
    Reshape { a: Value, out: Value },
    Transpose { a: Value, out: Value },
    SumAll { a: Value, out: Value },
    MeanAll { a: Value, out: Value },
    GatherRows { a: Value, idx: Vec<usize>, out: Value },
    ScatterRows { a: Value, idx: Vec<usize>, out: Value },
    AddBiasRows { a: Value, b: Value, out: Value },
    SliceCols { a: Value, start: usize, out: Value },
    ConcatCols { parts: Vec<Value>, out: Value },
}

struct Node {
    value: Tensor,
    grad: Vec<f64>,
}

/// Reverse-mode autodiff tape.
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), ops: Vec::new() }
    }

    /// Registers an input tensor (parameter or data) as a graph leaf.
    pub fn leaf(&mut self, t: Tensor) -> Value {
        let n = t.len();
        self.nodes.push(Node { value: t, grad: vec![0.0; n] });
        Value(self.nodes.len() - 1)
    }

    fn push(&mut self, t: Tensor) -> Value {
        self.leaf(t)
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call with respect to node `v`.
    pub fn grad(&self, v: Value) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(node.value.shape().to_vec(), node.grad.clone())
            .expect("grad buffer matches value shape")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn shape(&self, v: Value) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn mat_dims(&self, v: Value, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        match s.len() {
            2 => Ok((s[0], s[1])),
            _ => Err(Error::ShapeMismatch {
                op,
                detail: format!("expected a matrix, got shape {:?}", s),
            }),
        }
    }

    // ---- builders ------------------------------------------------------

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (m, k) = self.mat_dims(a, "matmul")?;
        let (k2, n) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims {k} vs {k2}"),
            });
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += x * brow[j];
                }
            }
        }
        let out = self.push(Tensor::new(vec![m, n], out)?);
        self.ops.push(Op::MatMul { a, b, out });
        Ok(out)
    }

    fn binary_shapes(&self, a: Value, b: Value, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let la = self.nodes[a.0].value.len();
        let lb = self.nodes[b.0].value.len();
        if sa == sb || la == 1 || lb == 1 {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?} (only exact or single-element broadcast)", sa, sb),
            })
        }
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary_shapes(a, b, "add")?;
        let out = self.elementwise(a, b, |x, y| x + y);
        let out = self.push(out);
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary_shapes(a, b, "sub")?;
        let out = self.elementwise(a, b, |x, y| x - y);
        let out = self.push(out);
        self.ops.push(Op::Sub { a, b, out });
        Ok(out)
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary_shapes(a, b, "mul")?;
        let out = self.elementwise(a, b, |x, y| x * y);
        let out = self.push(out);
        self.ops.push(Op::Mul { a, b, out });
        Ok(out)
    }

    fn elementwise(&self, a: Value, b: Value, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        if ta.len() == 1 && tb.len() != 1 {
            let x = ta.data()[0];
            let data = tb.data().iter().map(|&y| f(x, y)).collect();
            Tensor::new(tb.shape().to_vec(), data).expect("same length")
        } else if tb.len() == 1 && ta.len() != 1 {
            let y = tb.data()[0];
            let data = ta.data().iter().map(|&x| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data).expect("same length")
        } else {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data).expect("same length")
        }
    }

    pub fn scale(&mut self, a: Value, c: f64) -> Result<Value> {
        let t = &self.nodes[a.0].value;
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| c * x).collect())?;
        let out = self.push(out);
        self.ops.push(Op::Scale { a, c, out });
        Ok(out)
    }

    pub fn sigmoid(&mut self, a: Value) -> Result<Value> {
        let t = &self.nodes[a.0].value;
        let data = t.data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let out = self.push(out);
        self.ops.push(Op::Sigmoid { a, out });
        Ok(out)
    }

    pub fn relu(&mut self, a: Value) -> Result<Value> {
        let t = &self.nodes[a.0].value;
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let out = self.push(out);
        self.ops.push(Op::Relu { a, out });
        Ok(out)
    }

    /// Lane decomposition for softmax: (outer count, outer stride, lane count,
    /// lane stride) such that element `o * os + i * ls` walks lane `o`.
    fn lanes(&self, v: Value, axis: usize) -> Result<(usize, usize, usize, usize)> {
        let s = self.shape(v);
        match (s.len(), axis) {
            (1, 0) => Ok((1, 0, s[0], 1)),
            (2, 0) => Ok((s[1], 1, s[0], s[1])),
            (2, 1) => Ok((s[0], s[1], s[1], 1)),
            (rank, _) => Err(Error::InvalidAxis { axis, rank }),
        }
    }

    /// Softmax along `axis`, with per-lane max subtraction for stability.
    pub fn softmax(&mut self, a: Value, axis: usize) -> Result<Value> {
        let (outer, os, lane, ls) = self.lanes(a, axis)?;
        let t = &self.nodes[a.0].value;
        let mut data = t.data().to_vec();
        for o in 0..outer {
            let mut m = f64::NEG_INFINITY;
            for i in 0..lane {
                m = m.max(data[o * os + i * ls]);
            }
            let mut sum = 0.0;
            for i in 0..lane {
                let e = (data[o * os + i * ls] - m).exp();
                data[o * os + i * ls] = e;
                sum += e;
            }
            for i in 0..lane {
                data[o * os + i * ls] /= sum;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let out = self.push(out);
        self.ops.push(Op::Softmax { a, axis, out });
        Ok(out)
    }

    /// 2D cross-correlation. `x`: `[C_in, H, W]`, `w`: `[C_out, C_in, kh, kw]`,
    /// `b`: `[C_out]`. Zero padding `pad` on all sides.
    pub fn conv2d(&mut self, x: Value, w: Value, b: Value, stride: usize, pad: usize) -> Result<Value> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 3 || ws.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("x {:?} must be rank 3, w {:?} rank 4", xs, ws),
            });
        }
        let (cin, h, wd) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("x has {cin} channels, kernel expects {wcin}"),
            });
        }
        if bs != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias {:?} must be [{cout}]", bs),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidConfig { detail: "conv2d stride must be positive".into() });
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel {kh}x{kw} exceeds padded input {h}x{wd} pad {pad}"),
            });
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let xv = self.nodes[x.0].value.data();
        let wv = self.nodes[w.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bv[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += xv[(ci * h + iy as usize) * wd + ix as usize]
                                    * wv[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let out = self.push(Tensor::new(vec![cout, oh, ow], out)?);
        self.ops.push(Op::Conv2d { x, w, b, stride, pad, out });
        Ok(out)
    }

    /// Window bounds for adaptive pooling: `[floor(i*n/o), ceil((i+1)*n/o))`.
    fn pool_window(i: usize, n: usize, o: usize) -> (usize, usize) {
        let lo = i * n / o;
        let hi = ((i + 1) * n).div_ceil(o);
        (lo, hi)
    }

    /// Adaptive average pool of `[C, H, W]` to `[C, out_h, out_w]`.
    pub fn adaptive_avg_pool(&mut self, x: Value, out_h: usize, out_w: usize) -> Result<Value> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "adaptive_avg_pool",
                detail: format!("expected [C, H, W], got {:?}", xs),
            });
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(Error::InvalidTarget {
                detail: format!("pool {h}x{w} to {out_h}x{out_w}"),
            });
        }
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![0.0; c * out_h * out_w];
        for ci in 0..c {
            for oy in 0..out_h {
                let (y0, y1) = Self::pool_window(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = Self::pool_window(ox, w, out_w);
                    let mut acc = 0.0;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            acc += xv[(ci * h + iy) * w + ix];
                        }
                    }
                    out[(ci * out_h + oy) * out_w + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        let out = self.push(Tensor::new(vec![c, out_h, out_w], out)?);
        self.ops.push(Op::AdaptiveAvgPool { x, out });
        Ok(out)
    }

    /// Source coordinate and weights for bilinear resampling without corner
    /// alignment: `src = (d + 0.5) * in / out - 0.5`, clamped at zero.
    fn lerp_coords(d: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
        let src = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, src - i0 as f64)
    }

    /// Bilinear resample of `[C, H, W]` to `[C, out_h, out_w]`.
    pub fn bilinear(&mut self, x: Value, out_h: usize, out_w: usize) -> Result<Value> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "bilinear",
                detail: format!("expected [C, H, W], got {:?}", xs),
            });
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidTarget {
                detail: format!("resample {h}x{w} to {out_h}x{out_w}"),
            });
        }
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![0.0; c * out_h * out_w];
        for oy in 0..out_h {
            let (y0, y1, wy) = Self::lerp_coords(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1, wx) = Self::lerp_coords(ox, w, out_w);
                for ci in 0..c {
                    let base = ci * h;
                    let v00 = xv[(base + y0) * w + x0];
                    let v01 = xv[(base + y0) * w + x1];
                    let v10 = xv[(base + y1) * w + x0];
                    let v11 = xv[(base + y1) * w + x1];
                    out[(ci * out_h + oy) * out_w + ox] = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                        + wy * ((1.0 - wx) * v10 + wx * v11);
                }
            }
        }
        let out = self.push(Tensor::new(vec![c, out_h, out_w], out)?);
        self.ops.push(Op::Bilinear { x, out });
        Ok(out)
    }

    pub fn reshape(&mut self, a: Value, shape: Vec<usize>) -> Result<Value> {
        let t = self.nodes[a.0].value.clone().reshaped(shape)?;
        let out = self.push(t);
        self.ops.push(Op::Reshape { a, out });
        Ok(out)
    }

    pub fn transpose(&mut self, a: Value) -> Result<Value> {
        let (m, n) = self.mat_dims(a, "transpose")?;
        let av = self.nodes[a.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let out = self.push(Tensor::new(vec![n, m], out)?);
        self.ops.push(Op::Transpose { a, out });
        Ok(out)
    }

    pub fn sum_all(&mut self, a: Value) -> Result<Value> {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let out = self.push(Tensor::scalar(s));
        self.ops.push(Op::SumAll { a, out });
        Ok(out)
    }

    pub fn mean_all(&mut self, a: Value) -> Result<Value> {
        let t = &self.nodes[a.0].value;
        if t.is_empty() {
            return Err(Error::EmptyInput { what: "mean_all" });
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let out = self.push(Tensor::scalar(m));
        self.ops.push(Op::MeanAll { a, out });
        Ok(out)
    }

    /// Selects rows of a matrix: `out[i] = a[idx[i]]`.
    pub fn gather_rows(&mut self, a: Value, idx: &[usize]) -> Result<Value> {
        let (m, n) = self.mat_dims(a, "gather_rows")?;
        if idx.is_empty() {
            return Err(Error::EmptyInput { what: "gather_rows indices" });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                detail: format!("row index {bad} out of range for {m} rows"),
            });
        }
        let av = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&av[i * n..(i + 1) * n]);
        }
        let out = self.push(Tensor::new(vec![idx.len(), n], out)?);
        self.ops.push(Op::GatherRows { a, idx: idx.to_vec(), out });
        Ok(out)
    }

    /// Places rows of `a` into a zero matrix with `rows` rows:
    /// `out[idx[i]] += a[i]`. Rows not named by `idx` stay exactly zero.
    pub fn scatter_rows(&mut self, a: Value, idx: &[usize], rows: usize) -> Result<Value> {
        let (m, n) = self.mat_dims(a, "scatter_rows")?;
        if idx.len() != m {
            return Err(Error::ShapeMismatch {
                op: "scatter_rows",
                detail: format!("{} indices for {m} rows", idx.len()),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::ShapeMismatch {
                op: "scatter_rows",
                detail: format!("row index {bad} out of range for {rows} rows"),
            });
        }
        let av = self.nodes[a.0].value.data();
        let mut out = vec![0.0; rows * n];
        for (i, &r) in idx.iter().enumerate() {
            for j in 0..n {
                out[r * n + j] += av[i * n + j];
            }
        }
        let out = self.push(Tensor::new(vec![rows, n], out)?);
        self.ops.push(Op::ScatterRows { a, idx: idx.to_vec(), out });
        Ok(out)
    }

    /// Adds a length-`d` bias vector to every row of an `[N, d]` matrix.
    pub fn add_bias_rows(&mut self, a: Value, b: Value) -> Result<Value> {
        let (m, n) = self.mat_dims(a, "add_bias_rows")?;
        let blen = self.nodes[b.0].value.len();
        if blen != n {
            return Err(Error::ShapeMismatch {
                op: "add_bias_rows",
                detail: format!("bias length {blen} vs {n} columns"),
            });
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = av[i * n + j] + bv[j];
            }
        }
        let out = self.push(Tensor::new(vec![m, n], out)?);
        self.ops.push(Op::AddBiasRows { a, b, out });
        Ok(out)
    }

    /// Column slice `[N, C] -> [N, len]` starting at `start`.
    pub fn slice_cols(&mut self, a: Value, start: usize, len: usize) -> Result<Value> {
        let (m, n) = self.mat_dims(a, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                detail: format!("slice {start}..{} of {n} columns", start + len),
            });
        }
        let av = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        let out = self.push(Tensor::new(vec![m, len], out)?);
        self.ops.push(Op::SliceCols { a, start, out });
        Ok(out)
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::EmptyInput { what: "concat_cols" });
        }
        let (m, _) = self.mat_dims(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.mat_dims(p, "concat_cols")?;
            if pm != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts differ: {m} vs {pm}"),
                });
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                let pv = self.nodes[p.0].value.data();
                out.extend_from_slice(&pv[i * w..(i + 1) * w]);
            }
        }
        let out = self.push(Tensor::new(vec![m, total], out)?);
        self.ops.push(Op::ConcatCols { parts: parts.to_vec(), out });
        Ok(out)
    }

    // ---- backward ------------------------------------------------------

    /// Seeds `d loss / d loss = 1` and accumulates gradients for every node.
    /// `loss` must hold exactly one element.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        let n = self.nodes[loss.0].value.len();
        if n != 1 {
            return Err(Error::NonScalarLoss { len: n });
        }
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad[0] = 1.0;
        for oi in (0..self.ops.len()).rev() {
            self.backward_op(oi);
        }
        Ok(())
    }

    /// Takes the grad buffer of `v` (leaves a placeholder to appease the
    /// borrow checker); must be restored by `put_grad`.
    fn take_grad(&mut self, v: Value) -> Vec<f64> {
        std::mem::take(&mut self.nodes[v.0].grad)
    }

    fn put_grad(&mut self, v: Value, g: Vec<f64>) {
        self.nodes[v.0].grad = g;
    }

    fn backward_op(&mut self, oi: usize) {
        // Ops are moved out one at a time so node buffers can be borrowed
        // mutably; the op list is restored before returning.
        let op = std::mem::replace(&mut self.ops[oi], Op::SumAll { a: Value(0), out: Value(0) });
        match &op {
            Op::MatMul { a, b, out } => {
                let g = self.take_grad(*out);
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                {
                    let bv = self.nodes[b.0].value.data().to_vec();
                    let ga = &mut self.nodes[a.0].grad;
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                }
                {
                    let av = self.nodes[a.0].value.data().to_vec();
                    let gb = &mut self.nodes[b.0].grad;
                    for p in 0..k {
                        for i in 0..m {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                }
                self.put_grad(*out, g);
            }
            Op::Add { a, b, out } => {
                let g = self.take_grad(*out);
                self.accumulate_broadcast(*a, &g, 1.0);
                self.accumulate_broadcast(*b, &g, 1.0);
                self.put_grad(*out, g);
            }
            Op::Sub { a, b, out } => {
                let g = self.take_grad(*out);
                self.accumulate_broadcast(*a, &g, 1.0);
                self.accumulate_broadcast(*b, &g, -1.0);
                self.put_grad(*out, g);
            }
            Op::Mul { a, b, out } => {
                let g = self.take_grad(*out);
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                self.accumulate_scaled_by(*a, &g, &bv);
                self.accumulate_scaled_by(*b, &g, &av);
                self.put_grad(*out, g);
            }
            Op::Scale { a, c, out } => {
                let g = self.take_grad(*out);
                let ga = &mut self.nodes[a.0].grad;
                for (gi, go) in ga.iter_mut().zip(&g) {
                    *gi += c * go;
                }
                self.put_grad(*out, g);
            }
            Op::Sigmoid { a, out } => {
                let g = self.take_grad(*out);
                let sv = self.nodes[out.0].value.data().to_vec();
                let ga = &mut self.nodes[a.0].grad;
                for i in 0..g.len() {
                    ga[i] += g[i] * sv[i] * (1.0 - sv[i]);
                }
                self.put_grad(*out, g);
            }
            Op::Relu { a, out } => {
                let g = self.take_grad(*out);
                let av = self.nodes[a.0].value.data().to_vec();
                let ga = &mut self.nodes[a.0].grad;
                for i in 0..g.len() {
                    if av[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
                self.put_grad(*out, g);
            }
            Op::Softmax { a, axis, out } => {
                let g = self.take_grad(*out);
                let (outer, os, lane, ls) = self.lanes(*a, *axis).expect("validated at record");
                let sv = self.nodes[out.0].value.data().to_vec();
                let ga = &mut self.nodes[a.0].grad;
                for o in 0..outer {
                    let mut dot = 0.0;
                    for i in 0..lane {
                        let k = o * os + i * ls;
                        dot += g[k] * sv[k];
                    }
                    for i in 0..lane {
                        let k = o * os + i * ls;
                        ga[k] += sv[k] * (g[k] - dot);
                    }
                }
                self.put_grad(*out, g);
            }
            Op::Conv2d { x, w, b, stride, pad, out } => {
                let g = self.take_grad(*out);
                let xs = self.shape(*x).to_vec();
                let os = self.shape(*out).to_vec();
                let ws = self.shape(*w).to_vec();
                let (cin, h, wd) = (xs[0], xs[1], xs[2]);
                let (cout, oh, ow) = (os[0], os[1], os[2]);
                let (kh, kw) = (ws[2], ws[3]);
                let xv = self.nodes[x.0].value.data().to_vec();
                let wv = self.nodes[w.0].value.data().to_vec();
                {
                    let gb = &mut self.nodes[b.0].grad;
                    for co in 0..cout {
                        gb[co] += g[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
                    }
                }
                {
                    let gw = &mut self.nodes[w.0].grad;
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[(co * oh + oy) * ow + ox];
                                if go == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - *pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - *pad as isize;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            gw[((co * cin + ci) * kh + ky) * kw + kx] +=
                                                go * xv[(ci * h + iy as usize) * wd + ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let gx = &mut self.nodes[x.0].grad;
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[(co * oh + oy) * ow + ox];
                                if go == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - *pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - *pad as isize;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            gx[(ci * h + iy as usize) * wd + ix as usize] +=
                                                go * wv[((co * cin + ci) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                self.put_grad(*out, g);
            }
            Op::AdaptiveAvgPool { x, out } => {
                let g = self.take_grad(*out);
                let xs = self.shape(*x).to_vec();
                let os = self.shape(*out).to_vec();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (os[1], os[2]);
                let gx = &mut self.nodes[x.0].grad;
                for ci in 0..c {
                    for oy in 0..oh {
                        let (y0, y1) = Self::pool_window(oy, h, oh);
                        for ox in 0..ow {
                            let (x0, x1) = Self::pool_window(ox, w, ow);
                            let share =
                                g[(ci * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                            for iy in y0..y1 {
                                for ix in x0..x1 {
                                    gx[(ci * h + iy) * w + ix] += share;
                                }
                            }
                        }
                    }
                }
                self.put_grad(*out, g);
            }
            Op::Bilinear { x, out } => {
                let g = self.take_grad(*out);
                let xs = self.shape(*x).to_vec();
                let os = self.shape(*out).to_vec();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (os[1], os[2]);
                let gx = &mut self.nodes[x.0].grad;
                for oy in 0..oh {
                    let (y0, y1, wy) = Self::lerp_coords(oy, h, oh);
                    for ox in 0..ow {
                        let (x0, x1, wx) = Self::lerp_coords(ox, w, ow);
                        for ci in 0..c {
                            let go = g[(ci * oh + oy) * ow + ox];
                            let base = ci * h;
                            gx[(base + y0) * w + x0] += go * (1.0 - wy) * (1.0 - wx);
                            gx[(base + y0) * w + x1] += go * (1.0 - wy) * wx;
                            gx[(base + y1) * w + x0] += go * wy * (1.0 - wx);
                            gx[(base + y1) * w + x1] += go * wy * wx;
                        }
                    }
                }
                self.put_grad(*out, g);
            }
            Op::Reshape { a, out } => {
                let g = self.take_grad(*out);
                let ga = &mut self.nodes[a.0].grad;
                for (gi, go) in ga.iter_mut().zip(&g) {
                    *gi += go;
                }
                self.put_grad(*out, g);
            }
            Op::Transpose { a, out } => {
                let g = self.take_grad(*out);
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let ga = &mut self.nodes[a.0].grad;
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
                self.put_grad(*out, g);
            }
            Op::SumAll { a, out } => {
                let g = self.take_grad(*out);
                let ga = &mut self.nodes[a.0].grad;
                for gi in ga.iter_mut() {
                    *gi += g[0];
                }
                self.put_grad(*out, g);
            }
            Op::MeanAll { a, out } => {
                let g = self.take_grad(*out);
                let n = self.nodes[a.0].value.len() as f64;
                let ga = &mut self.nodes[a.0].grad;
                for gi in ga.iter_mut() {
                    *gi += g[0] / n;
                }
                self.put_grad(*out, g);
            }
            Op::GatherRows { a, idx, out } => {
                let g = self.take_grad(*out);
                let n = self.shape(*a)[1];
                let ga = &mut self.nodes[a.0].grad;
                for (i, &r) in idx.iter().enumerate() {
                    for j in 0..n {
                        ga[r * n + j] += g[i * n + j];
                    }
                }
                self.put_grad(*out, g);
            }
            Op::ScatterRows { a, idx, out } => {
                let g = self.take_grad(*out);
                let n = self.shape(*a)[1];
                let ga = &mut self.nodes[a.0].grad;
                for (i, &r) in idx.iter().enumerate() {
                    for j in 0..n {
                        ga[i * n + j] += g[r * n + j];
                    }
                }
                self.put_grad(*out, g);
            }
            Op::AddBiasRows { a, b, out } => {
                let g = self.take_grad(*out);
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                {
                    let ga = &mut self.nodes[a.0].grad;
                    for (gi, go) in ga.iter_mut().zip(&g) {
                        *gi += go;
                    }
                }
                {
                    let gb = &mut self.nodes[b.0].grad;
                    for i in 0..m {
                        for j in 0..n {
                            gb[j] += g[i * n + j];
                        }
                    }
                }
                self.put_grad(*out, g);
            }
            Op::SliceCols { a, start, out } => {
                let g = self.take_grad(*out);
                let n = self.shape(*a)[1];
                let len = self.shape(*out)[1];
                let m = self.shape(*out)[0];
                let ga = &mut self.nodes[a.0].grad;
                for i in 0..m {
                    for j in 0..len {
                        ga[i * n + start + j] += g[i * len + j];
                    }
                }
                self.put_grad(*out, g);
            }
            Op::ConcatCols { parts, out } => {
                let g = self.take_grad(*out);
                let m = self.shape(*out)[0];
                let total = self.shape(*out)[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    let gp = &mut self.nodes[p.0].grad;
                    for i in 0..m {
                        for j in 0..w {
                            gp[i * w + j] += g[i * total + offset + j];
                        }
                    }
                    offset += w;
                }
                debug_assert_eq!(offset, total);
                self.put_grad(*out, g);
            }
        }
        self.ops[oi] = op;
    }

    /// Adds `sign * g` into the grad of `v`, folding when `v` is a broadcast
    /// single-element operand.
    fn accumulate_broadcast(&mut self, v: Value, g: &[f64], sign: f64) {
        let gv = &mut self.nodes[v.0].grad;
        if gv.len() == 1 && g.len() != 1 {
            gv[0] += sign * g.iter().sum::<f64>();
        } else {
            for (gi, go) in gv.iter_mut().zip(g) {
                *gi += sign * go;
            }
        }
    }

    /// Adds `g * other_value` into the grad of `v` for the product rule,
    /// handling single-element broadcast on either side.
    fn accumulate_scaled_by(&mut self, v: Value, g: &[f64], other: &[f64]) {
        let gv = &mut self.nodes[v.0].grad;
        if gv.len() == 1 && g.len() != 1 {
            // v was broadcast: fold the elementwise product back down.
            let mut acc = 0.0;
            for (go, &ov) in g.iter().zip(other) {
                acc += go * ov;
            }
            gv[0] += acc;
        } else if other.len() == 1 && g.len() != 1 {
            let ov = other[0];
            for (gi, go) in gv.iter_mut().zip(g) {
                *gi += go * ov;
            }
        } else {
            for i in 0..gv.len() {
                gv[i] += g[i] * other[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![r, c], v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_forward_matches_hand_computation() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.leaf(mat(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_rejects_inner_dim_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(2, 3, &[0.0; 6]));
        let b = tape.leaf(mat(2, 2, &[0.0; 4]));
        assert_eq!(tape.matmul(a, b).unwrap_err().category(), "ShapeMismatch");
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(1, 2, &[1.0, 2.0]));
        assert_eq!(tape.backward(a).unwrap_err().category(), "NonScalarLoss");
    }

    #[test]
    fn matmul_gradients_match_hand_derivation() {
        // loss = sum(A @ B) gives dA = row sums of B^T, dB = col sums of A^T.
        let mut tape = Tape::new();
        let a = tape.leaf(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(mat(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(c).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(tape.grad(b).data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_match_known_values() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(1, 3, &[1.0, 2.0, 3.0]));
        let s = tape.softmax(a, 1).unwrap();
        let v = tape.value(s).data().to_vec();
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // exp(1..3) normalized.
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        for (got, want) in v.iter().zip(e.iter().map(|x| x / z)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut t1 = Tape::new();
        let a1 = t1.leaf(mat(1, 3, &[1.0, 2.0, 3.0]));
        let s1 = t1.softmax(a1, 1).unwrap();
        let mut t2 = Tape::new();
        let a2 = t2.leaf(mat(1, 3, &[1001.0, 1002.0, 1003.0]));
        let s2 = t2.softmax(a2, 1).unwrap();
        for (x, y) in t1.value(s1).data().iter().zip(t2.value(s2).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_axis_zero_normalizes_columns() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(2, 2, &[0.0, 5.0, 0.0, 5.0]));
        let s = tape.softmax(a, 0).unwrap();
        let v = tape.value(s).data();
        assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
        assert!((v[1] + v[3] - 1.0).abs() < 1e-12);
        assert!((v[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(2, 2, &[0.0; 4]));
        assert_eq!(tape.softmax(a, 2).unwrap_err().category(), "InvalidAxis");
    }

    #[test]
    fn conv2d_identity_kernel_preserves_input() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap());
        let w = tape.leaf(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![1], vec![0.0]).unwrap());
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv2d_known_3x3_sum_kernel() {
        // All-ones 3x3 kernel with pad 1 computes neighborhood sums.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.leaf(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap());
        let b = tape.leaf(Tensor::new(vec![1], vec![0.0]).unwrap());
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn conv2d_rejects_oversized_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 2, 2]));
        let w = tape.leaf(Tensor::zeros(vec![1, 1, 5, 5]));
        let b = tape.leaf(Tensor::zeros(vec![1]));
        assert_eq!(tape.conv2d(x, w, b, 1, 1).unwrap_err().category(), "ShapeMismatch");
    }

    #[test]
    fn conv2d_stride_two_halves_extent() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![3, 8, 8]));
        let w = tape.leaf(Tensor::zeros(vec![5, 3, 3, 3]));
        let b = tape.leaf(Tensor::zeros(vec![5]));
        let y = tape.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[5, 4, 4]);
    }

    #[test]
    fn adaptive_pool_uneven_windows_partition_input() {
        // 5 -> 2 splits as [0,3) and [2,5) per floor/ceil window rule.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let y = tape.adaptive_avg_pool(x, 1, 2).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 2.0).abs() < 1e-12);
        assert!((v[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_pool_to_same_size_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.adaptive_avg_pool(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn bilinear_doubling_a_column_pair() {
        // Frozen expected values for [0, 1] -> length 4 without corner
        // alignment: clamped endpoints, interior linear blend.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 1], vec![0.0, 1.0]).unwrap());
        let y = tape.bilinear(x, 4, 1).unwrap();
        let v = tape.value(y).data();
        let want = [0.0, 0.25, 0.75, 1.0];
        for (got, w) in v.iter().zip(want) {
            assert!((got - w).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn bilinear_same_size_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3, 3], (0..18).map(|v| v as f64).collect()).unwrap());
        let y = tape.bilinear(x, 3, 3).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn bilinear_constant_image_stays_constant() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(vec![1, 3, 5], 7.5));
        let y = tape.bilinear(x, 8, 2).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 7.5).abs() < 1e-12);
        }
    }

    #[test]
    fn scatter_then_gather_roundtrips_rows() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let s = tape.scatter_rows(a, &[3, 0], 5).unwrap();
        assert_eq!(
            tape.value(s).data(),
            &[3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0]
        );
        let g = tape.gather_rows(s, &[3, 0]).unwrap();
        assert_eq!(tape.value(g).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn scatter_rows_untouched_rows_are_exactly_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(1, 3, &[-1.5, 2.5, 0.25]));
        let s = tape.scatter_rows(a, &[1], 3).unwrap();
        let v = tape.value(s).data();
        for &x in &v[0..3] {
            assert_eq!(x.to_bits(), 0.0f64.to_bits());
        }
        for &x in &v[6..9] {
            assert_eq!(x.to_bits(), 0.0f64.to_bits());
        }
    }

    #[test]
    fn slice_concat_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let left = tape.slice_cols(a, 0, 2).unwrap();
        let right = tape.slice_cols(a, 2, 2).unwrap();
        let back = tape.concat_cols(&[left, right]).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(a).data());
    }

    #[test]
    fn broadcast_scalar_multiply_accumulates_fold_gradient() {
        // loss = sum(s * x) with scalar s: ds = sum(x), dx_i = s.
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::scalar(3.0));
        let x = tape.leaf(mat(1, 3, &[1.0, 2.0, 4.0]));
        let p = tape.mul(s, x).unwrap();
        let loss = tape.sum_all(p).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(s).data(), &[7.0]);
        assert_eq!(tape.grad(x).data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn gradients_accumulate_across_reuse() {
        // loss = sum(x + x) so dx = 2 everywhere.
        let mut tape = Tape::new();
        let x = tape.leaf(mat(1, 2, &[1.0, 2.0]));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).data(), &[2.0, 2.0]);
    }

    #[test]
    fn relu_blocks_gradient_at_negative_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(mat(1, 3, &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn mean_all_gradient_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let m = tape.mean_all(x).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn sigmoid_output_stays_in_open_unit_interval() {
        // +/-30 keeps the result strictly interior; far larger magnitudes
        // round to exactly 0 or 1 in f64.
        let mut tape = Tape::new();
        let x = tape.leaf(mat(1, 3, &[-30.0, 0.0, 30.0]));
        let y = tape.sigmoid(x).unwrap();
        for &v in tape.value(y).data() {
            assert!(v > 0.0 && v < 1.0);
        }
        assert!((tape.value(y).data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_symmetric_about_one_half() {
        let mut tape = Tape::new();
        let x = tape.leaf(mat(1, 4, &[-3.0, -0.5, 0.5, 3.0]));
        let y = tape.sigmoid(x).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] + v[3] - 1.0).abs() < 1e-12);
        assert!((v[1] + v[2] - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn matmul_is_associative_on_small_triples(
                a in prop::collection::vec(-2.0f64..2.0, 16),
                b in prop::collection::vec(-2.0f64..2.0, 16),
                c in prop::collection::vec(-2.0f64..2.0, 16),
            ) {
                let mut tape = Tape::new();
                let ta = tape.leaf(mat(4, 4, &a));
                let tb = tape.leaf(mat(4, 4, &b));
                let tc = tape.leaf(mat(4, 4, &c));
                let ab = tape.matmul(ta, tb).unwrap();
                let ab_c = tape.matmul(ab, tc).unwrap();
                let bc = tape.matmul(tb, tc).unwrap();
                let a_bc = tape.matmul(ta, bc).unwrap();
                for (x, y) in tape.value(ab_c).data().iter().zip(tape.value(a_bc).data()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }

            #[test]
            fn softmax_rows_always_sum_to_one(
                vals in prop::collection::vec(-50.0f64..50.0, 12),
            ) {
                let mut tape = Tape::new();
                let x = tape.leaf(mat(3, 4, &vals));
                let s = tape.softmax(x, 1).unwrap();
                let v = tape.value(s).data();
                for r in 0..3 {
                    let sum: f64 = v[r * 4..(r + 1) * 4].iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
