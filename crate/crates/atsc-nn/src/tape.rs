//! Tape-recorded forward ops with reverse-mode backward.
//!
//! A [`Tape`] is built fresh per forward pass (or reused via
//! [`Tape::clear`]). Nodes are appended in evaluation order, so recording
//! order is already a topological order; backward walks it once in
//! reverse, accumulating gradients additively on fan-out.

use crate::params::{ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::{NnError, Result};

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tid(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf: constant or leased parameter. No backward.
    Leaf,
    Matmul(Tid, Tid),
    /// C = A * B^T without materializing the transpose.
    MatmulNT(Tid, Tid),
    Add(Tid, Tid),
    Sub(Tid, Tid),
    /// Row-broadcast add: [r,c] + [1,c].
    AddRow(Tid, Tid),
    MulElem(Tid, Tid),
    Scale(Tid, f64),
    Relu(Tid),
    Transpose(Tid),
    ConcatCols(Vec<Tid>),
    SliceCols(Tid, usize, usize),
    /// Row-wise softmax with a shared column mask; masked weights are exactly 0.
    MaskedSoftmax(Tid, Vec<bool>),
    /// Per-row normalization with gain/bias, population variance.
    LayerNorm {
        x: Tid,
        gain: Tid,
        bias: Tid,
        eps: f64,
    },
    /// Mean over unmasked rows -> [1,c].
    MaskedMeanRows(Tid, Vec<bool>),
    GatherCol(Tid, usize),
    SumAll(Tid),
    /// Huber loss against a constant target, summed over entries -> [1,1].
    Huber {
        pred: Tid,
        target: Vec<f64>,
        delta: f64,
    },
}

struct Node<S> {
    rows: usize,
    cols: usize,
    values: Vec<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    op: Op,
    /// Set when this leaf was leased from a parameter store.
    param: Option<ParamId>,
}

/// Records one forward pass and runs reverse-mode accumulation over it.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Drops all recorded nodes, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<S>,
        requires_grad: bool,
        op: Op,
    ) -> Tid {
        debug_assert_eq!(values.len(), rows * cols);
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad: None,
            requires_grad,
            op,
            param: None,
        });
        Tid(self.nodes.len() - 1)
    }

    /// Constant leaf; gradients never flow into it.
    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<S>) -> Tid {
        self.push(rows, cols, values, false, Op::Leaf)
    }

    pub fn constant_row(&mut self, values: Vec<S>) -> Tid {
        self.constant(1, values.len(), values)
    }

    pub fn scalar_const(&mut self, v: S) -> Tid {
        self.constant(1, 1, vec![v])
    }

    /// Differentiable leaf that is not a stored parameter.
    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<S>) -> Tid {
        self.push(rows, cols, values, true, Op::Leaf)
    }

    /// Leases a parameter onto the tape (values copied). After
    /// [`Tape::backward`], [`Tape::write_param_grads`] adds the leaf's
    /// gradient into the store's gradient buffer.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Tid {
        let p = store.get(id);
        let t = self.push(p.rows, p.cols, p.values.clone(), true, Op::Leaf);
        self.nodes[t.0].param = Some(id);
        t
    }

    /// Leases a parameter as a frozen constant (stop-gradient lease).
    pub fn param_const(&mut self, store: &ParamStore<S>, id: ParamId) -> Tid {
        let p = store.get(id);
        self.push(p.rows, p.cols, p.values.clone(), false, Op::Leaf)
    }

    pub fn shape(&self, t: Tid) -> (usize, usize) {
        let n = &self.nodes[t.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, t: Tid) -> &[S] {
        &self.nodes[t.0].values
    }

    /// Gradient buffer of a node, if backward reached it.
    pub fn grad(&self, t: Tid) -> Option<&[S]> {
        self.nodes[t.0].grad.as_deref()
    }

    fn rg(&self, t: Tid) -> bool {
        self.nodes[t.0].requires_grad
    }

    // ---- forward ops ----

    pub fn matmul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                lhs: (m, k),
                rhs: (k2, n),
            });
        }
        let mut out = vec![S::zero(); m * n];
        {
            let av = &self.nodes[a.0].values;
            let bv = &self.nodes[b.0].values;
            for i in 0..m {
                let arow = &av[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (p, &aip) in arow.iter().enumerate() {
                    if aip == S::zero() {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    for j in 0..n {
                        orow[j] += aip * brow[j];
                    }
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(m, n, out, rg, Op::Matmul(a, b)))
    }

    /// C = A * B^T with A [m,k], B [n,k] -> C [m,n].
    pub fn matmul_nt(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(NnError::ShapeMismatch {
                op: "matmul_nt",
                lhs: (m, k),
                rhs: (n, k2),
            });
        }
        let mut out = vec![S::zero(); m * n];
        {
            let av = &self.nodes[a.0].values;
            let bv = &self.nodes[b.0].values;
            for i in 0..m {
                let arow = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &bv[j * k..(j + 1) * k];
                    let mut acc = S::zero();
                    for p in 0..k {
                        acc += arow[p] * brow[p];
                    }
                    out[i * n + j] = acc;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(m, n, out, rg, Op::MatmulNT(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Tid, b: Tid) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(NnError::ShapeMismatch {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out: Vec<S> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let out: Vec<S> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x - y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, rg, Op::Sub(a, b)))
    }

    /// [r,c] + [1,c], the bias pattern.
    pub fn add_row(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(b);
        if br != 1 || bc != c {
            return Err(NnError::ShapeMismatch {
                op: "add_row",
                lhs: (r, c),
                rhs: (br, bc),
            });
        }
        let mut out = Vec::with_capacity(r * c);
        {
            let av = &self.nodes[a.0].values;
            let bv = &self.nodes[b.0].values;
            for i in 0..r {
                for j in 0..c {
                    out.push(av[i * c + j] + bv[j]);
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, rg, Op::AddRow(a, b)))
    }

    pub fn mul_elem(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (r, c) = self.same_shape("mul_elem", a, b)?;
        let out: Vec<S> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, rg, Op::MulElem(a, b)))
    }

    pub fn scale(&mut self, a: Tid, factor: f64) -> Tid {
        let (r, c) = self.shape(a);
        let f = lit::<S>(factor);
        let out: Vec<S> = self.nodes[a.0].values.iter().map(|&x| x * f).collect();
        let rg = self.rg(a);
        self.push(r, c, out, rg, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Tid) -> Tid {
        let (r, c) = self.shape(a);
        let out: Vec<S> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        let rg = self.rg(a);
        self.push(r, c, out, rg, Op::Relu(a))
    }

    pub fn transpose(&mut self, a: Tid) -> Tid {
        let (r, c) = self.shape(a);
        let mut out = vec![S::zero(); r * c];
        {
            let av = &self.nodes[a.0].values;
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = av[i * c + j];
                }
            }
        }
        let rg = self.rg(a);
        self.push(c, r, out, rg, Op::Transpose(a))
    }

    /// Horizontal concat of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Tid]) -> Result<Tid> {
        assert!(!parts.is_empty());
        let (r, _) = self.shape(parts[0]);
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(NnError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: (r, 0),
                    rhs: (pr, pc),
                });
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let (_, pc) = self.shape(p);
                let pv = &self.nodes[p.0].values;
                out.extend_from_slice(&pv[i * pc..(i + 1) * pc]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(r, total, out, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Column slice [start, end).
    pub fn slice_cols(&mut self, a: Tid, start: usize, end: usize) -> Result<Tid> {
        let (r, c) = self.shape(a);
        if start >= end || end > c {
            return Err(NnError::ShapeMismatch {
                op: "slice_cols",
                lhs: (r, c),
                rhs: (start, end),
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        {
            let av = &self.nodes[a.0].values;
            for i in 0..r {
                out.extend_from_slice(&av[i * c + start..i * c + end]);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(r, w, out, rg, Op::SliceCols(a, start, end)))
    }

    /// Row-wise softmax over the unmasked columns; masked columns get
    /// weight exactly 0 and their logits are never read.
    pub fn masked_softmax(&mut self, a: Tid, mask: &[bool]) -> Result<Tid> {
        let (r, c) = self.shape(a);
        if mask.len() != c {
            return Err(NnError::ShapeMismatch {
                op: "masked_softmax",
                lhs: (r, c),
                rhs: (1, mask.len()),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(NnError::FullyMasked {
                op: "masked_softmax",
            });
        }
        let mut out = vec![S::zero(); r * c];
        {
            let av = &self.nodes[a.0].values;
            for i in 0..r {
                let row = &av[i * c..(i + 1) * c];
                let mut max = S::neg_infinity();
                for j in 0..c {
                    if mask[j] && row[j] > max {
                        max = row[j];
                    }
                }
                let mut sum = S::zero();
                for j in 0..c {
                    if mask[j] {
                        let e = (row[j] - max).exp();
                        out[i * c + j] = e;
                        sum += e;
                    }
                }
                for j in 0..c {
                    if mask[j] {
                        out[i * c + j] = out[i * c + j] / sum;
                    }
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(r, c, out, rg, Op::MaskedSoftmax(a, mask.to_vec())))
    }

    /// Per-row `(x - mean)/sqrt(var + eps) * gain + bias` with population
    /// variance. `gain` and `bias` are [1,c].
    pub fn layer_norm(&mut self, x: Tid, gain: Tid, bias: Tid, eps: f64) -> Result<Tid> {
        let (r, c) = self.shape(x);
        for (t, name) in [(gain, "layer_norm gain"), (bias, "layer_norm bias")] {
            let s = self.shape(t);
            if s != (1, c) {
                return Err(NnError::ShapeMismatch {
                    op: if name.contains("gain") {
                        "layer_norm gain"
                    } else {
                        "layer_norm bias"
                    },
                    lhs: (r, c),
                    rhs: s,
                });
            }
        }
        let mut out = vec![S::zero(); r * c];
        {
            let xv = &self.nodes[x.0].values;
            let gv = &self.nodes[gain.0].values;
            let bv = &self.nodes[bias.0].values;
            let cn = lit::<S>(c as f64);
            let epss = lit::<S>(eps);
            for i in 0..r {
                let row = &xv[i * c..(i + 1) * c];
                let mut mean = S::zero();
                for &v in row {
                    mean += v;
                }
                mean = mean / cn;
                let mut var = S::zero();
                for &v in row {
                    let d = v - mean;
                    var += d * d;
                }
                var = var / cn;
                let inv = (var + epss).sqrt().recip();
                for j in 0..c {
                    let xh = (row[j] - mean) * inv;
                    out[i * c + j] = xh * gv[j] + bv[j];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(r, c, out, rg, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Mean over unmasked rows -> [1,c].
    pub fn masked_mean_rows(&mut self, a: Tid, mask: &[bool]) -> Result<Tid> {
        let (r, c) = self.shape(a);
        if mask.len() != r {
            return Err(NnError::ShapeMismatch {
                op: "masked_mean_rows",
                lhs: (r, c),
                rhs: (mask.len(), 1),
            });
        }
        let k = mask.iter().filter(|&&m| m).count();
        if k == 0 {
            return Err(NnError::FullyMasked {
                op: "masked_mean_rows",
            });
        }
        let inv = lit::<S>(1.0 / k as f64);
        let mut out = vec![S::zero(); c];
        {
            let av = &self.nodes[a.0].values;
            for i in 0..r {
                if mask[i] {
                    for j in 0..c {
                        out[j] += av[i * c + j];
                    }
                }
            }
            for v in out.iter_mut() {
                *v *= inv;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(1, c, out, rg, Op::MaskedMeanRows(a, mask.to_vec())))
    }

    /// Extracts column `j` of a [1,n] row -> [1,1].
    pub fn gather_col(&mut self, a: Tid, j: usize) -> Result<Tid> {
        let (r, c) = self.shape(a);
        if r != 1 || j >= c {
            return Err(NnError::ShapeMismatch {
                op: "gather_col",
                lhs: (r, c),
                rhs: (1, j),
            });
        }
        let v = self.nodes[a.0].values[j];
        let rg = self.rg(a);
        Ok(self.push(1, 1, vec![v], rg, Op::GatherCol(a, j)))
    }

    pub fn sum_all(&mut self, a: Tid) -> Tid {
        let mut acc = S::zero();
        for &v in &self.nodes[a.0].values {
            acc += v;
        }
        let rg = self.rg(a);
        self.push(1, 1, vec![acc], rg, Op::SumAll(a))
    }

    /// Summed Huber loss of `pred` against a constant target.
    pub fn huber_loss(&mut self, pred: Tid, target: &[f64], delta: f64) -> Result<Tid> {
        let (r, c) = self.shape(pred);
        if target.len() != r * c {
            return Err(NnError::ShapeMismatch {
                op: "huber_loss",
                lhs: (r, c),
                rhs: (1, target.len()),
            });
        }
        let d = lit::<S>(delta);
        let half = lit::<S>(0.5);
        let mut acc = S::zero();
        {
            let pv = &self.nodes[pred.0].values;
            for (i, &p) in pv.iter().enumerate() {
                let e = p - lit::<S>(target[i]);
                let ae = e.abs();
                acc += if ae <= d {
                    half * e * e
                } else {
                    d * (ae - half * d)
                };
            }
        }
        let rg = self.rg(pred);
        Ok(self.push(
            1,
            1,
            vec![acc],
            rg,
            Op::Huber {
                pred,
                target: target.to_vec(),
                delta,
            },
        ))
    }

    // ---- backward ----

    fn grad_buf(&mut self, t: Tid) -> &mut Vec<S> {
        let n = &mut self.nodes[t.0];
        let len = n.rows * n.cols;
        n.grad.get_or_insert_with(|| vec![S::zero(); len])
    }

    /// Reverse-topological gradient accumulation from a scalar loss.
    /// Repeated calls without clearing accumulate additively.
    pub fn backward(&mut self, loss: Tid) -> Result<()> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(NnError::NonScalarLoss { shape: (r, c) });
        }
        {
            let g = self.grad_buf(loss);
            g[0] += S::one();
        }
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gout) = self.nodes[idx].grad.clone() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (m, k) = self.shape(a);
                    let (_, n) = self.shape(b);
                    if self.rg(a) {
                        // dA += dC * B^T
                        let bv = self.nodes[b.0].values.clone();
                        let ga = self.grad_buf(a);
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = S::zero();
                                for j in 0..n {
                                    acc += gout[i * n + j] * bv[p * n + j];
                                }
                                ga[i * k + p] += acc;
                            }
                        }
                    }
                    if self.rg(b) {
                        // dB += A^T * dC
                        let av = self.nodes[a.0].values.clone();
                        let gb = self.grad_buf(b);
                        for p in 0..k {
                            for j in 0..n {
                                let mut acc = S::zero();
                                for i in 0..m {
                                    acc += av[i * k + p] * gout[i * n + j];
                                }
                                gb[p * n + j] += acc;
                            }
                        }
                    }
                }
                Op::MatmulNT(a, b) => {
                    let (m, k) = self.shape(a);
                    let (n, _) = self.shape(b);
                    if self.rg(a) {
                        // dA += dC * B
                        let bv = self.nodes[b.0].values.clone();
                        let ga = self.grad_buf(a);
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = S::zero();
                                for j in 0..n {
                                    acc += gout[i * n + j] * bv[j * k + p];
                                }
                                ga[i * k + p] += acc;
                            }
                        }
                    }
                    if self.rg(b) {
                        // dB += dC^T * A
                        let av = self.nodes[a.0].values.clone();
                        let gb = self.grad_buf(b);
                        for j in 0..n {
                            for p in 0..k {
                                let mut acc = S::zero();
                                for i in 0..m {
                                    acc += gout[i * n + j] * av[i * k + p];
                                }
                                gb[j * k + p] += acc;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for t in [a, b] {
                        if self.rg(t) {
                            let g = self.grad_buf(t);
                            for (gi, &go) in g.iter_mut().zip(&gout) {
                                *gi += go;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        let g = self.grad_buf(a);
                        for (gi, &go) in g.iter_mut().zip(&gout) {
                            *gi += go;
                        }
                    }
                    if self.rg(b) {
                        let g = self.grad_buf(b);
                        for (gi, &go) in g.iter_mut().zip(&gout) {
                            *gi -= go;
                        }
                    }
                }
                Op::AddRow(a, b) => {
                    let (r, c) = self.shape(a);
                    if self.rg(a) {
                        let g = self.grad_buf(a);
                        for (gi, &go) in g.iter_mut().zip(&gout) {
                            *gi += go;
                        }
                    }
                    if self.rg(b) {
                        let g = self.grad_buf(b);
                        for i in 0..r {
                            for j in 0..c {
                                g[j] += gout[i * c + j];
                            }
                        }
                    }
                }
                Op::MulElem(a, b) => {
                    if self.rg(a) {
                        let bv = self.nodes[b.0].values.clone();
                        let g = self.grad_buf(a);
                        for i in 0..g.len() {
                            g[i] += gout[i] * bv[i];
                        }
                    }
                    if self.rg(b) {
                        let av = self.nodes[a.0].values.clone();
                        let g = self.grad_buf(b);
                        for i in 0..g.len() {
                            g[i] += gout[i] * av[i];
                        }
                    }
                }
                Op::Scale(a, f) => {
                    if self.rg(a) {
                        let fs = lit::<S>(f);
                        let g = self.grad_buf(a);
                        for (gi, &go) in g.iter_mut().zip(&gout) {
                            *gi += go * fs;
                        }
                    }
                }
                Op::Relu(a) => {
                    if self.rg(a) {
                        let av = self.nodes[a.0].values.clone();
                        let g = self.grad_buf(a);
                        for i in 0..g.len() {
                            if av[i] > S::zero() {
                                g[i] += gout[i];
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    if self.rg(a) {
                        let (r, c) = self.shape(a);
                        let g = self.grad_buf(a);
                        for i in 0..r {
                            for j in 0..c {
                                g[i * c + j] += gout[j * r + i];
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (r, total) = {
                        let n = &self.nodes[idx];
                        (n.rows, n.cols)
                    };
                    let mut off = 0;
                    for &p in &parts {
                        let (_, pc) = self.shape(p);
                        if self.rg(p) {
                            let g = self.grad_buf(p);
                            for i in 0..r {
                                for j in 0..pc {
                                    g[i * pc + j] += gout[i * total + off + j];
                                }
                            }
                        }
                        off += pc;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    if self.rg(a) {
                        let (r, c) = self.shape(a);
                        let w = end - start;
                        let g = self.grad_buf(a);
                        for i in 0..r {
                            for j in 0..w {
                                g[i * c + start + j] += gout[i * w + j];
                            }
                        }
                    }
                }
                Op::MaskedSoftmax(a, mask) => {
                    if self.rg(a) {
                        let (r, c) = self.shape(a);
                        let pv = self.nodes[idx].values.clone();
                        let g = self.grad_buf(a);
                        for i in 0..r {
                            let prow = &pv[i * c..(i + 1) * c];
                            let grow = &gout[i * c..(i + 1) * c];
                            let mut dot = S::zero();
                            for j in 0..c {
                                if mask[j] {
                                    dot += grow[j] * prow[j];
                                }
                            }
                            for j in 0..c {
                                if mask[j] {
                                    g[i * c + j] += prow[j] * (grow[j] - dot);
                                }
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (r, c) = self.shape(x);
                    let cn = lit::<S>(c as f64);
                    let epss = lit::<S>(eps);
                    let xv = self.nodes[x.0].values.clone();
                    let gv = self.nodes[gain.0].values.clone();
                    // Recompute per-row stats; cheaper than caching for these sizes.
                    for i in 0..r {
                        let row = &xv[i * c..(i + 1) * c];
                        let mut mean = S::zero();
                        for &v in row {
                            mean += v;
                        }
                        mean = mean / cn;
                        let mut var = S::zero();
                        for &v in row {
                            let d = v - mean;
                            var += d * d;
                        }
                        var = var / cn;
                        let inv = (var + epss).sqrt().recip();
                        let grow = &gout[i * c..(i + 1) * c];
                        if self.rg(gain) {
                            let gg = self.grad_buf(gain);
                            for j in 0..c {
                                let xh = (row[j] - mean) * inv;
                                gg[j] += grow[j] * xh;
                            }
                        }
                        if self.rg(bias) {
                            let gb = self.grad_buf(bias);
                            for j in 0..c {
                                gb[j] += grow[j];
                            }
                        }
                        if self.rg(x) {
                            // dxh = dy * g; dx = inv*(dxh - mean(dxh) - xh*mean(dxh*xh))
                            let mut mean_dxh = S::zero();
                            let mut mean_dxh_xh = S::zero();
                            for j in 0..c {
                                let dxh = grow[j] * gv[j];
                                let xh = (row[j] - mean) * inv;
                                mean_dxh += dxh;
                                mean_dxh_xh += dxh * xh;
                            }
                            mean_dxh = mean_dxh / cn;
                            mean_dxh_xh = mean_dxh_xh / cn;
                            let gx = self.grad_buf(x);
                            for j in 0..c {
                                let dxh = grow[j] * gv[j];
                                let xh = (row[j] - mean) * inv;
                                gx[i * c + j] += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                            }
                        }
                    }
                }
                Op::MaskedMeanRows(a, mask) => {
                    if self.rg(a) {
                        let (r, c) = self.shape(a);
                        let k = mask.iter().filter(|&&m| m).count();
                        let inv = lit::<S>(1.0 / k as f64);
                        let g = self.grad_buf(a);
                        for i in 0..r {
                            if mask[i] {
                                for j in 0..c {
                                    g[i * c + j] += gout[j] * inv;
                                }
                            }
                        }
                    }
                }
                Op::GatherCol(a, j) => {
                    if self.rg(a) {
                        let g = self.grad_buf(a);
                        g[j] += gout[0];
                    }
                }
                Op::SumAll(a) => {
                    if self.rg(a) {
                        let g = self.grad_buf(a);
                        for gi in g.iter_mut() {
                            *gi += gout[0];
                        }
                    }
                }
                Op::Huber {
                    pred,
                    target,
                    delta,
                } => {
                    if self.rg(pred) {
                        let d = lit::<S>(delta);
                        let pv = self.nodes[pred.0].values.clone();
                        let g = self.grad_buf(pred);
                        for i in 0..g.len() {
                            let e = pv[i] - lit::<S>(target[i]);
                            let clipped = if e > d {
                                d
                            } else if e < -d {
                                -d
                            } else {
                                e
                            };
                            g[i] += gout[0] * clipped;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds the gradients of every leased parameter leaf into the store.
    pub fn write_param_grads(&self, store: &mut ParamStore<S>) {
        for node in &self.nodes {
            if let (Some(pid), Some(grad)) = (node.param, node.grad.as_ref()) {
                store.accumulate_grad(pid, grad);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> Tape<f64> {
        Tape::new()
    }

    #[test]
    fn matmul_identity_passthrough() {
        let mut tape = t();
        let i2 = tape.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let b = tape.constant(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = tape.matmul(i2, b).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut tape = t();
        let a = tape.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = tape.constant(2, 1, vec![5.0, 6.0]);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = t();
        let a = tape.constant(2, 3, vec![0.0; 6]);
        let b = tape.constant(2, 2, vec![0.0; 4]);
        assert!(matches!(
            tape.matmul(a, b),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = t();
        let w = tape.leaf(1, 3, vec![1.0, 2.0, 3.0]);
        let s = tape.sum_all(w);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = t();
        let w = tape.leaf(1, 3, vec![1.0, 2.0, 3.0]);
        let ww = tape.mul_elem(w, w).unwrap();
        let s = tape.sum_all(ww);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = t();
        let w = tape.leaf(1, 3, vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            tape.backward(w),
            Err(NnError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn fanout_accumulates() {
        // f = sum(w + w) -> grad 2 per entry.
        let mut tape = t();
        let w = tape.leaf(1, 2, vec![1.0, -1.0]);
        let s = tape.add(w, w).unwrap();
        let l = tape.sum_all(s);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn masked_softmax_basics() {
        let mut tape = t();
        let x = tape.constant_row(vec![0.3, -0.7, 100.0]);
        let p = tape.masked_softmax(x, &[true, true, false]).unwrap();
        let v = tape.value(p);
        assert_eq!(v[2], 0.0);
        let e0 = (0.3f64).exp();
        let e1 = (-0.7f64).exp();
        assert!((v[0] - e0 / (e0 + e1)).abs() < 1e-12);
        assert!((v[1] - e1 / (e0 + e1)).abs() < 1e-12);
        assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_uniform_over_k() {
        let mut tape = t();
        let x = tape.constant_row(vec![2.5; 5]);
        let p = tape
            .masked_softmax(x, &[true, false, true, true, false])
            .unwrap();
        let v = tape.value(p);
        for (j, &m) in [true, false, true, true, false].iter().enumerate() {
            if m {
                assert!((v[j] - 1.0 / 3.0).abs() < 1e-15);
            } else {
                assert_eq!(v[j], 0.0);
            }
        }
    }

    #[test]
    fn masked_softmax_all_false_errors() {
        let mut tape = t();
        let x = tape.constant_row(vec![1.0, 2.0]);
        assert!(matches!(
            tape.masked_softmax(x, &[false, false]),
            Err(NnError::FullyMasked { .. })
        ));
    }

    #[test]
    fn masked_softmax_ignores_masked_logits() {
        let run = |hidden: f64| {
            let mut tape = t();
            let x = tape.constant_row(vec![0.1, 0.2, hidden]);
            let p = tape.masked_softmax(x, &[true, true, false]).unwrap();
            tape.value(p).to_vec()
        };
        assert_eq!(run(0.0), run(1e30));
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = t();
        let x = tape.constant(1, 4, vec![3.0; 4]);
        let g = tape.constant_row(vec![1.0; 4]);
        let b = tape.constant_row(vec![0.0; 4]);
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        for &v in tape.value(y) {
            assert!(v.abs() <= 1e-5f64.sqrt());
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let mut tape = t();
        let x = tape.constant(1, 2, vec![1.0, 3.0]);
        let g = tape.constant_row(vec![1.0, 1.0]);
        let b = tape.constant_row(vec![0.0, 0.0]);
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        let v = tape.value(y);
        assert!((v[0] + 1.0).abs() < 1e-5);
        assert!((v[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn huber_quadratic_and_linear_regions() {
        let mut tape = t();
        let p = tape.leaf(1, 2, vec![0.5, 3.0]);
        let l = tape.huber_loss(p, &[0.0, 0.0], 1.0).unwrap();
        // 0.5*0.25 + 1*(3-0.5) = 0.125 + 2.5
        assert!((tape.value(l)[0] - 2.625).abs() < 1e-12);
        tape.backward(l).unwrap();
        let g = tape.grad(p).unwrap();
        assert_eq!(g, &[0.5, 1.0]);
    }

    #[test]
    fn masked_mean_rows_examples() {
        let mut tape = t();
        let x = tape.constant(3, 2, vec![1.0, 2.0, 3.0, 4.0, 100.0, 200.0]);
        let m = tape.masked_mean_rows(x, &[true, true, false]).unwrap();
        assert_eq!(tape.value(m), &[2.0, 3.0]);
    }

    #[test]
    fn stop_gradient_lease_gets_no_grad() {
        let mut store = ParamStore::<f64>::new();
        let pid = store.add("w", 1, 2, vec![1.0, 2.0]).unwrap();
        let mut tape = t();
        let w = tape.param_const(&store, pid);
        let wl = tape.leaf(1, 2, vec![5.0, 5.0]);
        let prod = tape.mul_elem(w, wl).unwrap();
        let l = tape.sum_all(prod);
        tape.backward(l).unwrap();
        assert!(tape.grad(w).is_none());
        assert_eq!(tape.grad(wl).unwrap(), &[1.0, 2.0]);
        tape.write_param_grads(&mut store);
        assert_eq!(store.get(pid).grad, &[0.0, 0.0]);
    }
}
