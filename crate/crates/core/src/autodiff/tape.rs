//! Reverse-mode tape over dense matrices.
//!
//! Every operation appends one node holding its forward value. Nodes are
//! stored in creation order, which is a topological order, so `backward`
//! is a single reverse sweep that visits each op exactly once.

use super::gemm::gemm;
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    AddRowBias(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    /// Stores the softmax probabilities and the target matrix.
    CrossEntropy(Var, Vec<f64>, Vec<f64>),
    Sum(Var),
    /// Inputs `x, h, wx, wh, bx, bh`; cache holds `r, z, n, gh_n`.
    GruCell([Var; 6], Vec<f64>),
    /// Inputs `a, b`, gather indices, and the cached linear half and gate.
    GatedGather(Var, Var, Vec<usize>, Vec<f64>, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Test hook that injects a wrong backward rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Sigmoid backward scaled by 1.1.
    SigmoidBackward,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Fault,
    /// Reused buffers for fused-op temporaries.
    scratch: [Vec<f64>; 2],
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// participate in the loss.
    pub fn of(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[v.0]],
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn same_dims(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(), AutodiffError> {
    if a != b {
        return Err(AutodiffError::Shape {
            op,
            left: a,
            right: b,
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh` through one exponential; cheaper than the libm routine and
/// accurate to a few ulps in absolute terms.
fn tanh(x: f64) -> f64 {
    2.0 * sigmoid(2.0 * x) - 1.0
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        // Fully masked row; leave it at zero.
        dst.iter_mut().for_each(|d| *d = 0.0);
        return;
    }
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    dst.iter_mut().for_each(|d| *d /= total);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Fault) -> Self {
        Self {
            fault,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::from_rows(n.rows, n.cols, n.value.clone()).expect("node dims are consistent")
    }

    /// Records a tensor; it is differentiable iff the tensor requires grad.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims();
        self.push(r, c, t.values().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var, AutodiffError> {
        if values.len() != rows * cols {
            return Err(AutodiffError::Length {
                expected: rows * cols,
                found: values.len(),
            });
        }
        Ok(self.push(rows, cols, values, Op::Leaf, false))
    }

    fn ng(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(AutodiffError::Shape {
                op: "matmul",
                left: (m, k),
                right: (k2, n),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let (da, db) = (self.dims(a), self.dims(b));
        same_dims(name, da, db)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(da.0, da.1, out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    /// Adds a `1 x c` bias to every row of an `r x c` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let db = self.dims(bias);
        same_dims("add_row_bias", (1, c), db)?;
        let bv = self.value(bias);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(r, c, out, Op::AddRowBias(a, bias), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::Empty("concat_cols"));
        };
        let rows = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            same_dims("concat_cols", (rows, 0), (r, 0))?;
            total += c;
        }
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let c = self.dims(p).1;
            let src = self.value(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + c].copy_from_slice(&src[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(rows, total, out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if start > end || end > c {
            return Err(AutodiffError::Range { start, end, len: c });
        }
        let w = end - start;
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * w);
        for row in src.chunks_exact(c) {
            out.extend_from_slice(&row[start..end]);
        }
        let ng = self.ng(a);
        Ok(self.push(r, w, out, Op::SliceCols(a, start), ng))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if start > end || end > r {
            return Err(AutodiffError::Range { start, end, len: r });
        }
        let out = self.value(a)[start * c..end * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(end - start, c, out, Op::SliceRows(a, start), ng))
    }

    /// Output row `k` is input row `idx[k]`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(AutodiffError::Range {
                start: bad,
                end: bad + 1,
                len: r,
            });
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.ng(a);
        Ok(self.push(idx.len(), c, out, Op::GatherRows(a, idx.to_vec()), ng))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(r, c, out, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    /// Row-wise softmax. `-inf` entries get probability zero.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = vec![0.0; r * c];
        for (src, dst) in self.value(a).chunks_exact(c.max(1)).zip(out.chunks_exact_mut(c.max(1))) {
            softmax_row(src, dst);
        }
        let ng = self.ng(a);
        self.push(r, c, out, Op::SoftmaxRows(a), ng)
    }

    /// Mean over rows of `-sum_c t[r][c] * log softmax(logits)[r][c]`.
    ///
    /// Entries with a zero target are skipped, so `-inf` logits are allowed
    /// wherever the target is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[f64]) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(logits);
        if targets.len() != r * c {
            return Err(AutodiffError::Length {
                expected: r * c,
                found: targets.len(),
            });
        }
        if r == 0 {
            return Err(AutodiffError::Empty("cross_entropy"));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for row in 0..r {
            let src = &lv[row * c..(row + 1) * c];
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + src.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            softmax_row(src, &mut probs[row * c..(row + 1) * c]);
            for col in 0..c {
                let t = targets[row * c + col];
                if t != 0.0 {
                    loss -= t * (src[col] - lse);
                }
            }
        }
        loss /= r as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy(logits, probs, targets.to_vec()),
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.ng(a);
        self.push(1, 1, vec![s], Op::Sum(a), ng)
    }

    /// Fused GRU cell with gate blocks ordered reset, update, candidate:
    /// `h' = n + z * (h - n)`, `n = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))`.
    pub fn gru_cell(&mut self, x: Var, h: Var, wx: Var, wh: Var, bx: Var, bh: Var) -> Result<Var, AutodiffError> {
        let (rows, input) = self.dims(x);
        let (hr, hd) = self.dims(h);
        let shape_err = |left, right| AutodiffError::Shape {
            op: "gru_cell",
            left,
            right,
        };
        if hr != rows {
            return Err(shape_err((rows, input), (hr, hd)));
        }
        for (w, want) in [(wx, (input, 3 * hd)), (wh, (hd, 3 * hd)), (bx, (1, 3 * hd)), (bh, (1, 3 * hd))] {
            if self.dims(w) != want {
                return Err(shape_err(want, self.dims(w)));
            }
        }
        let w3 = 3 * hd;
        let [mut gx, mut gh] = std::mem::take(&mut self.scratch);
        gx.resize(rows * w3, 0.0);
        gh.resize(rows * w3, 0.0);
        gemm(rows, input, w3, self.value(x), false, self.value(wx), false, &mut gx, 0.0);
        gemm(rows, hd, w3, self.value(h), false, self.value(wh), false, &mut gh, 0.0);
        let (bxv, bhv, hv) = (self.value(bx), self.value(bh), self.value(h));
        let mut cache = vec![0.0; 4 * rows * hd];
        let mut out = vec![0.0; rows * hd];
        let block = rows * hd;
        for r in 0..rows {
            for k in 0..hd {
                let gxr = &gx[r * w3..(r + 1) * w3];
                let ghr = &gh[r * w3..(r + 1) * w3];
                let reset = sigmoid(gxr[k] + bxv[k] + ghr[k] + bhv[k]);
                let update = sigmoid(gxr[hd + k] + bxv[hd + k] + ghr[hd + k] + bhv[hd + k]);
                let ghn = ghr[2 * hd + k] + bhv[2 * hd + k];
                let cand = tanh(gxr[2 * hd + k] + bxv[2 * hd + k] + reset * ghn);
                let i = r * hd + k;
                cache[i] = reset;
                cache[block + i] = update;
                cache[2 * block + i] = cand;
                cache[3 * block + i] = ghn;
                out[i] = cand + update * (hv[i] - cand);
            }
        }
        self.scratch = [gx, gh];
        let ins = [x, h, wx, wh, bx, bh];
        let ng = ins.iter().any(|&v| self.ng(v));
        Ok(self.push(rows, hd, out, Op::GruCell(ins, cache), ng))
    }

    /// Gated message over gathered rows: with `z = a + b[idx]` split into
    /// halves `[l | q]`, returns `l * sigmoid(q)`.
    pub fn gated_gather(&mut self, a: Var, b: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let (rows, c2) = self.dims(a);
        let (brows, bc) = self.dims(b);
        if bc != c2 || c2 % 2 != 0 || idx.len() != rows {
            return Err(AutodiffError::Shape {
                op: "gated_gather",
                left: (rows, c2),
                right: (brows, bc),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= brows) {
            return Err(AutodiffError::Range {
                start: bad,
                end: bad + 1,
                len: brows,
            });
        }
        let m = c2 / 2;
        let (av, bv) = (self.value(a), self.value(b));
        let mut lin = vec![0.0; rows * m];
        let mut gate = vec![0.0; rows * m];
        let mut out = vec![0.0; rows * m];
        for (r, &j) in idx.iter().enumerate() {
            let ar = &av[r * c2..(r + 1) * c2];
            let br = &bv[j * c2..(j + 1) * c2];
            for k in 0..m {
                let l = ar[k] + br[k];
                let s = sigmoid(ar[m + k] + br[m + k]);
                lin[r * m + k] = l;
                gate[r * m + k] = s;
                out[r * m + k] = l * s;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(rows, m, out, Op::GatedGather(a, b, idx.to_vec(), lin, gate), ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let dims = self.dims(loss);
        if dims != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(dims));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(n, None);
        Ok(Gradients {
            grads,
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
        })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    gemm(m, n, k, g, false, bv, true, ga, 1.0);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm(k, m, n, av, true, g, false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.acc(grads, v) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddRowBias(a, bias) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in g.chunks_exact(cols) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if let Some(gp) = self.acc(grads, p) {
                        for r in 0..rows {
                            let src = &g[r * cols + offset..r * cols + offset + c];
                            gp[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let c_in = self.dims(*a).1;
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..rows {
                        let dst = &mut ga[r * c_in + start..r * c_in + start + cols];
                        dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if let Some(ga) = self.acc(grads, *a) {
                    let dst = &mut ga[start * cols..(start + rows) * cols];
                    dst.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::GatherRows(a, idx) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (k, &i) in idx.iter().enumerate() {
                        let dst = &mut ga[i * cols..(i + 1) * cols];
                        dst.iter_mut().zip(&g[k * cols..(k + 1) * cols]).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let factor = if self.fault == Fault::SigmoidBackward { 1.1 } else { 1.0 };
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += factor * g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Relu(a) => {
                let y = &node.value;
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        if y[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::Log(a) => {
                let x = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] / x[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            ga[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy(logits, probs, targets) => {
                let (rows, cols) = self.dims(*logits);
                let upstream = g[0] / rows as f64;
                if let Some(ga) = self.acc(grads, *logits) {
                    // Targets need not sum to one per row.
                    for row in 0..rows {
                        let span = row * cols..(row + 1) * cols;
                        let mass: f64 = targets[span.clone()].iter().sum();
                        for i in span {
                            ga[i] += upstream * (mass * probs[i] - targets[i]);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::GruCell([x, h, wx, wh, bx, bh], cache) => self.gru_cell_backward(
                [*x, *h, *wx, *wh, *bx, *bh],
                cache,
                g,
                grads,
            ),
            Op::GatedGather(a, b, idx, lin, gate) => {
                let m = cols;
                let factor = if self.fault == Fault::SigmoidBackward { 1.1 } else { 1.0 };
                let mut dz = vec![0.0; rows * 2 * m];
                for i in 0..rows * m {
                    let (r, k) = (i / m, i % m);
                    let s = gate[i];
                    dz[r * 2 * m + k] = g[i] * s;
                    dz[r * 2 * m + m + k] = factor * g[i] * lin[i] * s * (1.0 - s);
                }
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(&dz).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (r, &j) in idx.iter().enumerate() {
                        let dst = &mut gb[j * 2 * m..(j + 1) * 2 * m];
                        dst.iter_mut().zip(&dz[r * 2 * m..(r + 1) * 2 * m]).for_each(|(x, y)| *x += y);
                    }
                }
            }
        }
    }

    fn gru_cell_backward(&self, ins: [Var; 6], cache: &[f64], g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [x, h, wx, wh, bx, bh] = ins;
        let (rows, input) = self.dims(x);
        let hd = self.dims(h).1;
        let w3 = 3 * hd;
        let block = rows * hd;
        let factor = if self.fault == Fault::SigmoidBackward { 1.1 } else { 1.0 };
        let hv = self.value(h);
        let mut dgx = vec![0.0; rows * w3];
        let mut dgh = vec![0.0; rows * w3];
        let mut dh_direct = vec![0.0; rows * hd];
        for i in 0..block {
            let (r, k) = (i / hd, i % hd);
            let (reset, update, cand, ghn) = (cache[i], cache[block + i], cache[2 * block + i], cache[3 * block + i]);
            dh_direct[i] = g[i] * update;
            let dz = g[i] * (hv[i] - cand);
            let dn = g[i] * (1.0 - update) * (1.0 - cand * cand);
            let dr = dn * ghn;
            let dar = factor * dr * reset * (1.0 - reset);
            let daz = factor * dz * update * (1.0 - update);
            let o = r * w3;
            dgx[o + k] = dar;
            dgx[o + hd + k] = daz;
            dgx[o + 2 * hd + k] = dn;
            dgh[o + k] = dar;
            dgh[o + hd + k] = daz;
            dgh[o + 2 * hd + k] = dn * reset;
        }
        let colsum = |d: &[f64], out: &mut Vec<f64>| {
            for row in d.chunks_exact(w3) {
                out.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        };
        if let Some(gx) = self.acc(grads, x) {
            gemm(rows, w3, input, &dgx, false, self.value(wx), true, gx, 1.0);
        }
        if let Some(gw) = self.acc(grads, wx) {
            gemm(input, rows, w3, self.value(x), true, &dgx, false, gw, 1.0);
        }
        if let Some(gb) = self.acc(grads, bx) {
            colsum(&dgx, gb);
        }
        if let Some(gh) = self.acc(grads, h) {
            gh.iter_mut().zip(&dh_direct).for_each(|(a, b)| *a += b);
            gemm(rows, w3, hd, &dgh, false, self.value(wh), true, gh, 1.0);
        }
        if let Some(gw) = self.acc(grads, wh) {
            gemm(hd, rows, w3, hv, true, &dgh, false, gw, 1.0);
        }
        if let Some(gb) = self.acc(grads, bh) {
            colsum(&dgh, gb);
        }
    }
}
