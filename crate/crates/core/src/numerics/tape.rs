//! Reverse-mode gradient tape over 2-D row-major buffers.
//!
//! Ops are appended in execution order, so the node list is already a
//! topological order; `backward` walks it once in reverse. Leaves may borrow
//! their data (frozen model weights are never copied onto the tape).

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, axpy, dot};
use super::PROB_FLOOR;
use crate::{Error, Result};

/// Handle to a node on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One input row for [`GradTape::embed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedSource {
    /// Row `id` of the token-embedding table.
    Token(usize),
    /// A free `[1, d]` vector on the tape (a steering embedding).
    Vector(Var),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Embed {
        table: Var,
        pos: Var,
        sources: Vec<EmbedSource>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        stats: Vec<(f32, f32)>,
    },
    Gelu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Attention {
        qkv: Var,
        n_heads: usize,
        probs: Vec<f32>,
    },
    KlToTarget {
        logits: Var,
        rows: Vec<usize>,
        target: Vec<f32>,
        student: Vec<f32>,
        t: f32,
    },
    CrossEntropy {
        logits: Var,
        rows: Vec<usize>,
        probs: Vec<f32>,
        targets: Vec<usize>,
    },
    Sum {
        x: Var,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, [f32]>,
    rows: usize,
    cols: usize,
    op: Op,
    needs_grad: bool,
    /// Scalar losses keep their f64 accumulator for finite-difference checks.
    wide: Option<f64>,
}

/// Records a forward computation and replays it backwards.
#[derive(Debug, Default)]
pub struct GradTape<'a> {
    nodes: Vec<Node<'a>>,
    trainable: Vec<Var>,
}

/// Gradients produced by [`GradTape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f32>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn accumulate<'g>(grads: &'g mut [Option<Vec<f32>>], v: Var, len: usize) -> &'g mut Vec<f32> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl<'a> GradTape<'a> {
    pub fn new() -> Self {
        GradTape::default()
    }

    fn push(&mut self, value: Cow<'a, [f32]>, rows: usize, cols: usize, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op, needs_grad, wide: None });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn check_shape(&self, v: Var, cols: usize, what: &str) -> Result<()> {
        let n = &self.nodes[v.0];
        if n.cols != cols {
            return Err(Error::invalid(format!(
                "{what}: expected {cols} columns, found {}",
                n.cols
            )));
        }
        Ok(())
    }

    /// A leaf borrowing `data` as a `[rows, cols]` matrix.
    pub fn leaf(&mut self, data: &'a [f32], rows: usize, cols: usize, trainable: bool) -> Var {
        let v = self.push(Cow::Borrowed(data), rows, cols, Op::Leaf, trainable);
        if trainable {
            self.trainable.push(v);
        }
        v
    }

    /// A leaf owning its data.
    pub fn leaf_owned(&mut self, data: Vec<f32>, rows: usize, cols: usize, trainable: bool) -> Var {
        let v = self.push(Cow::Owned(data), rows, cols, Op::Leaf, trainable);
        if trainable {
            self.trainable.push(v);
        }
        v
    }

    /// Leaves registered as trainable, in creation order.
    pub fn trainable(&self) -> &[Var] {
        &self.trainable
    }

    /// A scalar node's value before rounding to f32 (loss nodes only; other
    /// nodes return their f32 value widened).
    pub fn value_f64(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        n.wide.unwrap_or(n.value[0] as f64)
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input rows: each source row plus the matching positional row.
    pub fn embed(&mut self, table: Var, pos: Var, sources: Vec<EmbedSource>) -> Result<Var> {
        let (vocab, d) = self.shape(table);
        let (max_pos, pd) = self.shape(pos);
        if pd != d {
            return Err(Error::invalid("positional table width differs from embedding width"));
        }
        if sources.len() > max_pos {
            return Err(Error::Length { len: sources.len(), max: max_pos });
        }
        let mut out = vec![0.0f32; sources.len() * d];
        let mut needs = self.needs(pos);
        for (t, src) in sources.iter().enumerate() {
            let row = &mut out[t * d..(t + 1) * d];
            match *src {
                EmbedSource::Token(id) => {
                    if id >= vocab {
                        return Err(Error::invalid(format!("token id {id} outside vocabulary of {vocab}")));
                    }
                    row.copy_from_slice(&self.value(table)[id * d..(id + 1) * d]);
                    needs |= self.needs(table);
                }
                EmbedSource::Vector(v) => {
                    self.check_shape(v, d, "spliced embedding")?;
                    row.copy_from_slice(self.value(v));
                    needs |= self.needs(v);
                }
            }
            axpy(row, 1.0, &self.value(pos)[t * d..(t + 1) * d]);
        }
        let rows = sources.len();
        Ok(self.push(Cow::Owned(out), rows, d, Op::Embed { table, pos, sources }, needs))
    }

    /// `x · w + b` with `w` stored as `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, k) = self.shape(x);
        let (wk, m) = self.shape(w);
        if wk != k {
            return Err(Error::invalid(format!("linear: input width {k} vs weight rows {wk}")));
        }
        if let Some(b) = b {
            self.check_shape(b, m, "linear bias")?;
        }
        let out = kernels::matmul_rows(self.value(x), k, self.value(w), b.map(|b| self.value(b)), m);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Cow::Owned(out), rows, m, Op::Linear { x, w, b }, needs))
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Result<Var> {
        let (rows, d) = self.shape(x);
        self.check_shape(g, d, "layer norm gain")?;
        self.check_shape(b, d, "layer norm bias")?;
        let mut out = vec![0.0f32; rows * d];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            stats.push(kernels::layer_norm_row(
                &self.value(x)[r * d..(r + 1) * d],
                self.value(g),
                self.value(b),
                &mut out[r * d..(r + 1) * d],
            ));
        }
        let needs = self.needs(x) || self.needs(g) || self.needs(b);
        Ok(self.push(Cow::Owned(out), rows, d, Op::LayerNorm { x, g, b, stats }, needs))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        let needs = self.needs(x);
        self.push(Cow::Owned(out), rows, cols, Op::Gelu { x }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::invalid("add: shape mismatch"));
        }
        let (rows, cols) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), rows, cols, Op::Add { a, b }, needs))
    }

    /// Multi-head causal self-attention over a fused `[L, 3d]` q/k/v matrix.
    pub fn causal_attention(&mut self, qkv: Var, n_heads: usize) -> Result<Var> {
        let (rows, w) = self.shape(qkv);
        if w % 3 != 0 || (w / 3) % n_heads != 0 {
            return Err(Error::invalid("attention: width not divisible into heads"));
        }
        let d = w / 3;
        let src = self.value(qkv);
        let mut keys = vec![0.0f32; rows * d];
        let mut values = vec![0.0f32; rows * d];
        for r in 0..rows {
            keys[r * d..(r + 1) * d].copy_from_slice(&src[r * w + d..r * w + 2 * d]);
            values[r * d..(r + 1) * d].copy_from_slice(&src[r * w + 2 * d..(r + 1) * w]);
        }
        let mut out = vec![0.0f32; rows * d];
        let mut probs = vec![0.0f32; n_heads * rows * (rows + 1) / 2];
        for i in 0..rows {
            let base = n_heads * i * (i + 1) / 2;
            kernels::attend_row(
                &src[i * w..i * w + d],
                &keys,
                &values,
                i,
                d,
                n_heads,
                &mut probs[base..base + n_heads * (i + 1)],
                &mut out[i * d..(i + 1) * d],
            );
        }
        let needs = self.needs(qkv);
        Ok(self.push(Cow::Owned(out), rows, d, Op::Attention { qkv, n_heads, probs }, needs))
    }

    /// `T² · mean_r KL(target_r ‖ softmax(logits[rows[r]] / T))`, a scalar.
    ///
    /// `target` holds one probability row per entry of `rows`.
    pub fn kl_to_target(&mut self, logits: Var, rows: Vec<usize>, target: Vec<f32>, t: f32) -> Result<Var> {
        if !(t > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        let (n, v) = self.shape(logits);
        if rows.is_empty() || target.len() != rows.len() * v {
            return Err(Error::invalid(format!(
                "KL target has {} values for {} rows of width {v}",
                target.len(),
                rows.len()
            )));
        }
        let mut student = vec![0.0f32; rows.len() * v];
        let mut total = 0.0f64;
        for (k, &r) in rows.iter().enumerate() {
            if r >= n {
                return Err(Error::invalid("KL row outside logits"));
            }
            let q = &mut student[k * v..(k + 1) * v];
            q.copy_from_slice(&self.value(logits)[r * v..(r + 1) * v]);
            let lq = kernels::log_softmax_wide(q, t, PROB_FLOOR);
            kernels::softmax_in_place(q, t);
            total += target[k * v..(k + 1) * v]
                .iter()
                .zip(&lq)
                .filter(|(p, _)| **p > 0.0)
                .map(|(&p, &l)| p as f64 * (libm::log(p.max(PROB_FLOOR) as f64) - l))
                .sum::<f64>()
                .max(0.0);
        }
        let wide = t as f64 * t as f64 * total / rows.len() as f64;
        let value = wide as f32;
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite distillation loss".into()));
        }
        let needs = self.needs(logits);
        let v = self.push(
            Cow::Owned(vec![value]),
            1,
            1,
            Op::KlToTarget { logits, rows, target, student, t },
            needs,
        );
        self.nodes[v.0].wide = Some(wide);
        Ok(v)
    }

    /// Mean next-token cross entropy over the selected logit rows.
    pub fn cross_entropy(&mut self, logits: Var, rows: Vec<usize>, targets: Vec<usize>) -> Result<Var> {
        let (n, v) = self.shape(logits);
        if rows.is_empty() || rows.len() != targets.len() {
            return Err(Error::invalid("cross entropy needs one target per selected row"));
        }
        let mut probs = vec![0.0f32; rows.len() * v];
        let mut total = 0.0f64;
        for (k, (&r, &y)) in rows.iter().zip(&targets).enumerate() {
            if r >= n || y >= v {
                return Err(Error::invalid("cross entropy index out of range"));
            }
            let q = &mut probs[k * v..(k + 1) * v];
            q.copy_from_slice(&self.value(logits)[r * v..(r + 1) * v]);
            total -= kernels::log_softmax_wide(q, 1.0, PROB_FLOOR)[y];
            kernels::softmax_in_place(q, 1.0);
        }
        let wide = total / rows.len() as f64;
        let needs = self.needs(logits);
        let v = self.push(
            Cow::Owned(vec![wide as f32]),
            1,
            1,
            Op::CrossEntropy { logits, rows, probs, targets },
            needs,
        );
        self.nodes[v.0].wide = Some(wide);
        Ok(v)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let wide = self.value(x).iter().map(|&v| v as f64).sum::<f64>();
        let needs = self.needs(x);
        let v = self.push(Cow::Owned(vec![wide as f32]), 1, 1, Op::Sum { x }, needs);
        self.nodes[v.0].wide = Some(wide);
        v
    }

    /// Reverse pass from a scalar node. Gradients are returned for every leaf
    /// that was marked trainable (and reachable).
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::invalid("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = (if matches!(node.op, Op::Leaf) { None } else { grads[i].take() }) else {
                continue;
            };
            self.backward_op(node, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn backward_op(&self, node: &Node<'a>, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Embed { table, pos, sources } => {
                let d = node.cols;
                for (t, src) in sources.iter().enumerate() {
                    let gt = &g[t * d..(t + 1) * d];
                    match *src {
                        EmbedSource::Token(id) if self.needs(*table) => {
                            let len = self.value(*table).len();
                            axpy(&mut accumulate(grads, *table, len)[id * d..(id + 1) * d], 1.0, gt);
                        }
                        EmbedSource::Vector(v) if self.needs(v) => {
                            axpy(accumulate(grads, v, d), 1.0, gt);
                        }
                        _ => {}
                    }
                    if self.needs(*pos) {
                        let len = self.value(*pos).len();
                        axpy(&mut accumulate(grads, *pos, len)[t * d..(t + 1) * d], 1.0, gt);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (rows, k) = self.shape(*x);
                let m = node.cols;
                let wv = self.value(*w);
                if self.needs(*x) {
                    let dx = accumulate(grads, *x, rows * k);
                    for r in 0..rows {
                        let gr = &g[r * m..(r + 1) * m];
                        for i in 0..k {
                            dx[r * k + i] += dot(&wv[i * m..(i + 1) * m], gr);
                        }
                    }
                }
                if self.needs(*w) {
                    let xv = self.value(*x);
                    let dw = accumulate(grads, *w, k * m);
                    for r in 0..rows {
                        let gr = &g[r * m..(r + 1) * m];
                        for i in 0..k {
                            let xi = xv[r * k + i];
                            if xi != 0.0 {
                                axpy(&mut dw[i * m..(i + 1) * m], xi, gr);
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let db = accumulate(grads, *b, m);
                        for r in 0..rows {
                            axpy(db, 1.0, &g[r * m..(r + 1) * m]);
                        }
                    }
                }
            }
            Op::LayerNorm { x, g: gain, b, stats } => {
                let d = node.cols;
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let mut xhat = vec![0.0f32; d];
                let mut dxhat = vec![0.0f32; d];
                for (r, &(mean, rstd)) in stats.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    for j in 0..d {
                        xhat[j] = (xv[r * d + j] - mean) * rstd;
                        dxhat[j] = gr[j] * gv[j];
                    }
                    if self.needs(*x) {
                        let m1 = dxhat.iter().sum::<f32>() / d as f32;
                        let m2 = dot(&dxhat, &xhat) / d as f32;
                        let dx = &mut accumulate(grads, *x, xv.len())[r * d..(r + 1) * d];
                        for j in 0..d {
                            dx[j] += rstd * (dxhat[j] - m1 - xhat[j] * m2);
                        }
                    }
                    if self.needs(*gain) {
                        let dg = accumulate(grads, *gain, d);
                        for j in 0..d {
                            dg[j] += gr[j] * xhat[j];
                        }
                    }
                    if self.needs(*b) {
                        axpy(accumulate(grads, *b, d), 1.0, gr);
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x);
                let dx = accumulate(grads, *x, xv.len());
                for ((d, &xi), &gi) in dx.iter_mut().zip(xv.iter()).zip(g) {
                    *d += gi * kernels::gelu_grad(xi);
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        axpy(accumulate(grads, v, g.len()), 1.0, g);
                    }
                }
            }
            Op::Attention { qkv, n_heads, probs } => {
                let (rows, w) = self.shape(*qkv);
                let d = w / 3;
                let dh = d / n_heads;
                let scale = 1.0 / libm::sqrtf(dh as f32);
                let src = self.value(*qkv);
                let dqkv = accumulate(grads, *qkv, rows * w);
                let mut dp = vec![0.0f32; rows];
                for i in 0..rows {
                    let base = n_heads * i * (i + 1) / 2;
                    for h in 0..*n_heads {
                        let p = &probs[base + h * (i + 1)..base + (h + 1) * (i + 1)];
                        let go = &g[i * d + h * dh..i * d + (h + 1) * dh];
                        let mut s = 0.0f32;
                        for j in 0..=i {
                            let vj = &src[j * w + 2 * d + h * dh..j * w + 2 * d + (h + 1) * dh];
                            dp[j] = dot(go, vj);
                            s += p[j] * dp[j];
                            axpy(&mut dqkv[j * w + 2 * d + h * dh..j * w + 2 * d + (h + 1) * dh], p[j], go);
                        }
                        for j in 0..=i {
                            let ds = p[j] * (dp[j] - s) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let (qo, ko) = (i * w + h * dh, j * w + d + h * dh);
                            // dq_i += ds * k_j ; dk_j += ds * q_i
                            for c in 0..dh {
                                dqkv[qo + c] += ds * src[ko + c];
                                dqkv[ko + c] += ds * src[qo + c];
                            }
                        }
                    }
                }
            }
            Op::KlToTarget { logits, rows, target, student, t } => {
                let v = self.shape(*logits).1;
                let n = self.value(*logits).len();
                let coef = g[0] * *t / rows.len() as f32;
                let dz = accumulate(grads, *logits, n);
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..v {
                        dz[r * v + c] += coef * (student[k * v + c] - target[k * v + c]);
                    }
                }
            }
            Op::CrossEntropy { logits, rows, probs, targets } => {
                let v = self.shape(*logits).1;
                let n = self.value(*logits).len();
                let coef = g[0] / rows.len() as f32;
                let dz = accumulate(grads, *logits, n);
                for (k, (&r, &y)) in rows.iter().zip(targets).enumerate() {
                    for c in 0..v {
                        let onehot = if c == y { 1.0 } else { 0.0 };
                        dz[r * v + c] += coef * (probs[k * v + c] - onehot);
                    }
                }
            }
            Op::Sum { x } => {
                let len = self.value(*x).len();
                for d in accumulate(grads, *x, len).iter_mut() {
                    *d += g[0];
                }
            }
        }
    }
}
