//! Computation tape: records forward operations, replays them in reverse.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Local backward rule for one recorded operation. Inputs are tape indices;
/// anything else the rule needs (ids, saved probabilities) is captured here.
#[derive(Debug)]
enum Rule {
    Leaf,
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    AddRow { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulRow { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Relu { x: Var },
    Gelu { x: Var },
    /// Softmax over rows; backward reads the saved output, and masked-out
    /// columns fall out of it automatically because their saved weight is
    /// exactly zero.
    Softmax { x: Var },
    LayerNorm { x: Var },
    Gather { x: Var, ids: Vec<usize> },
    ConcatRows { a: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Reshape { x: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    MeanRows { x: Var },
    /// Mean over rows of `lse(z) - t.z`; `sm` is the saved row softmax.
    CrossEntropy { logits: Var, sm: Vec<f64>, target: Vec<f64> },
    /// Mean over rows of `sum t*(ln t - log_softmax(z))`; same gradient shape.
    KlDiv { logits: Var, sm: Vec<f64>, target: Vec<f64> },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires: bool,
    rule: Rule,
}

/// Ordered record of executed operations. Creation order is a topological
/// order of the DAG, so one reverse sweep visits every node exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

const LN_EPS: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor. Gradients flow back to it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Rule::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, requires: bool, rule: Rule) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires,
            rule,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    fn emit(&mut self, value: Tensor, requires: bool, rule: Rule, op: &'static str) -> Result<Var> {
        value.check_finite(op)?;
        Ok(self.push(value, requires, rule))
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        match s.len() {
            2 => Ok((s[0], s[1])),
            1 => Ok((1, s[0])),
            _ => Err(Error::ShapeMismatch {
                op,
                detail: format!("expected rank 1 or 2, got {s:?}"),
            }),
        }
    }

    // ── forward operations ───────────────────────────────────────────────

    /// `[n,m] x [m,p] -> [n,p]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims2(a, "matmul")?;
        let (m2, p) = self.dims2(b, "matmul")?;
        if m != m2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!(
                    "{:?} x {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            for k in 0..m {
                let aik = ad[i * m + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bd[k * p..(k + 1) * p];
                let orow = &mut out[i * p..(i + 1) * p];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        let req = self.requires(a) || self.requires(b);
        let t = Tensor { shape: vec![n, p], data: out };
        self.emit(t, req, Rule::Matmul { a, b }, "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims2(x, "transpose")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = xd[i * m + j];
            }
        }
        let req = self.requires(x);
        let t = Tensor { shape: vec![m, n], data: out };
        self.emit(t, req, Rule::Transpose { x }, "transpose")
    }

    /// Elementwise add; `b` may also be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_or_row("add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "sub",
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor { shape: sa.to_vec(), data };
        let req = self.requires(a) || self.requires(b);
        self.emit(t, req, Rule::Sub { a, b }, "sub")
    }

    /// Elementwise multiply; `b` may also be a single row broadcast over rows.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_or_row("mul", a, b)
    }

    fn binary_or_row(&mut self, op: &'static str, a: Var, b: Var) -> Result<Var> {
        let (na, ca) = self.dims2(a, op)?;
        let (nb, cb) = self.dims2(b, op)?;
        let same = self.value(a).shape() == self.value(b).shape();
        let row_bcast = nb == 1 && cb == ca && na >= 1 && !same;
        if !same && !row_bcast {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity(ad.len());
        for i in 0..na {
            for j in 0..ca {
                let x = ad[i * ca + j];
                let y = if same { bd[i * ca + j] } else { bd[j] };
                out.push(if op == "add" { x + y } else { x * y });
            }
        }
        let t = Tensor { shape: self.value(a).shape().to_vec(), data: out };
        let req = self.requires(a) || self.requires(b);
        let rule = match (op, same) {
            ("add", true) => Rule::Add { a, b },
            ("add", false) => Rule::AddRow { a, b },
            (_, true) => Rule::Mul { a, b },
            (_, false) => Rule::MulRow { a, b },
        };
        self.emit(t, req, rule, op)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let t = Tensor { shape: self.value(x).shape().to_vec(), data };
        let req = self.requires(x);
        self.emit(t, req, Rule::Scale { x, c }, "scale")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor { shape: self.value(x).shape().to_vec(), data };
        let req = self.requires(x);
        self.emit(t, req, Rule::Relu { x }, "relu")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| gelu_fwd(v)).collect();
        let t = Tensor { shape: self.value(x).shape().to_vec(), data };
        let req = self.requires(x);
        self.emit(t, req, Rule::Gelu { x }, "gelu")
    }

    /// Row-stochastic softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Softmax where columns with `valid[j] == false` get exactly zero weight.
    /// Equivalent to adding `-inf` to masked scores before a plain softmax.
    pub fn softmax_rows_masked(&mut self, x: Var, valid: &[bool]) -> Result<Var> {
        let (_, c) = self.dims2(x, "softmax")?;
        if valid.len() != c {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                detail: format!("mask length {} for {} columns", valid.len(), c),
            });
        }
        if valid.iter().all(|v| !v) {
            return Err(Error::InvalidArgument(
                "softmax mask excludes every column".into(),
            ));
        }
        self.softmax_impl(x, Some(valid.to_vec()))
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let (n, c) = self.dims2(x, "softmax")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = &xd[i * c..(i + 1) * c];
            let mut mx = f64::NEG_INFINITY;
            for j in 0..c {
                if mask.as_ref().is_none_or(|m| m[j]) && row[j] > mx {
                    mx = row[j];
                }
            }
            let mut denom = 0.0;
            for j in 0..c {
                if mask.as_ref().is_none_or(|m| m[j]) {
                    let e = (row[j] - mx).exp();
                    out[i * c + j] = e;
                    denom += e;
                }
            }
            for j in 0..c {
                out[i * c + j] /= denom;
            }
        }
        let t = Tensor { shape: self.value(x).shape().to_vec(), data: out };
        let req = self.requires(x);
        self.emit(t, req, Rule::Softmax { x }, "softmax")
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn layernorm_rows(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.dims2(x, "layernorm")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = &xd[i * c..(i + 1) * c];
            let (mean, inv_std) = layernorm_stats(row);
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv_std;
            }
        }
        let t = Tensor { shape: self.value(x).shape().to_vec(), data: out };
        let req = self.requires(x);
        self.emit(t, req, Rule::LayerNorm { x }, "layernorm")
    }

    /// Row gather: `out[i] = x[ids[i]]`. Backward scatter-adds, so repeated
    /// ids accumulate. This is both the embedding lookup and the im2col
    /// primitive.
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2(x, "gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows id {bad} out of range for {n} rows"
            )));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&xd[i * c..(i + 1) * c]);
        }
        let t = Tensor { shape: vec![ids.len(), c], data: out };
        let req = self.requires(x);
        self.emit(t, req, Rule::Gather { x, ids: ids.to_vec() }, "gather_rows")
    }

    /// Embedding lookup: row `ids[i]` of the table for each position.
    pub fn embed_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca) = self.dims2(a, "concat_rows")?;
        let (nb, cb) = self.dims2(b, "concat_rows")?;
        if ca != cb {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                detail: format!("{ca} vs {cb} columns"),
            });
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let t = Tensor { shape: vec![na + nb, ca], data };
        let req = self.requires(a) || self.requires(b);
        self.emit(t, req, Rule::ConcatRows { a, b }, "concat_rows")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca) = self.dims2(a, "concat_cols")?;
        let (nb, cb) = self.dims2(b, "concat_cols")?;
        if na != nb {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                detail: format!("{na} vs {nb} rows"),
            });
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut data = Vec::with_capacity(na * (ca + cb));
        for i in 0..na {
            data.extend_from_slice(&ad[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&bd[i * cb..(i + 1) * cb]);
        }
        let t = Tensor { shape: vec![na, ca + cb], data };
        let req = self.requires(a) || self.requires(b);
        self.emit(t, req, Rule::ConcatCols { a, b }, "concat_cols")
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c) = self.dims2(x, "slice_rows")?;
        if start >= end || end > n {
            return Err(Error::InvalidArgument(format!(
                "slice_rows {start}..{end} of {n} rows"
            )));
        }
        let data = self.value(x).data()[start * c..end * c].to_vec();
        let t = Tensor { shape: vec![end - start, c], data };
        let req = self.requires(x);
        self.emit(t, req, Rule::SliceRows { x, start }, "slice_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c) = self.dims2(x, "slice_cols")?;
        if start >= end || end > c {
            return Err(Error::InvalidArgument(format!(
                "slice_cols {start}..{end} of {c} columns"
            )));
        }
        let xd = self.value(x).data();
        let w = end - start;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&xd[i * c + start..i * c + end]);
        }
        let t = Tensor { shape: vec![n, w], data };
        let req = self.requires(x);
        self.emit(t, req, Rule::SliceCols { x, start }, "slice_cols")
    }

    /// Metadata-only reshape of row-major data.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.value(x).shape(), shape),
            });
        }
        let t = Tensor { shape: shape.to_vec(), data: self.value(x).data().to_vec() };
        let req = self.requires(x);
        self.emit(t, req, Rule::Reshape { x }, "reshape")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let req = self.requires(x);
        self.emit(Tensor::scalar(s), req, Rule::SumAll { x }, "sum")
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data().iter().sum();
        let req = self.requires(x);
        self.emit(Tensor::scalar(s / n), req, Rule::MeanAll { x }, "mean")
    }

    /// Column means: `[n,c] -> [1,c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.dims2(x, "mean_rows")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; c];
        for i in 0..n {
            for j in 0..c {
                out[j] += xd[i * c + j];
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let t = Tensor { shape: vec![1, c], data: out };
        let req = self.requires(x);
        self.emit(t, req, Rule::MeanRows { x }, "mean_rows")
    }

    /// Mean over rows of `logsumexp(z) - t.z` for a target distribution `t`
    /// (each row of `target` must sum to 1). Gradient is `(softmax - t)/rows`.
    pub fn cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let (loss, sm) = self.ce_like(logits, target, false)?;
        let req = self.requires(logits);
        let target = target.data().to_vec();
        self.emit(
            Tensor::scalar(loss),
            req,
            Rule::CrossEntropy { logits, sm, target },
            "cross_entropy",
        )
    }

    /// Mean over rows of `KL(target || softmax(logits))`, the target held
    /// constant. Same gradient as cross-entropy, shifted by the target
    /// entropy in the value.
    pub fn kl_divergence(&mut self, target: &Tensor, logits: Var) -> Result<Var> {
        let (loss, sm) = self.ce_like(logits, target, true)?;
        let req = self.requires(logits);
        let target = target.data().to_vec();
        self.emit(
            Tensor::scalar(loss),
            req,
            Rule::KlDiv { logits, sm, target },
            "kl_divergence",
        )
    }

    fn ce_like(&mut self, logits: Var, target: &Tensor, kl: bool) -> Result<(f64, Vec<f64>)> {
        let (n, c) = self.dims2(logits, "cross_entropy")?;
        if target.shape() != self.value(logits).shape() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("target {:?} vs logits {:?}", target.shape(), self.value(logits).shape()),
            });
        }
        let zd = self.value(logits).data();
        let td = target.data();
        let mut sm = vec![0.0; n * c];
        let mut total = 0.0;
        for i in 0..n {
            let row = &zd[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                sm[i * c + j] = e;
                denom += e;
            }
            let lse = mx + denom.ln();
            let mut dot = 0.0;
            let mut t_entropy = 0.0;
            for j in 0..c {
                sm[i * c + j] /= denom;
                let t = td[i * c + j];
                dot += t * row[j];
                if kl && t > 0.0 {
                    t_entropy += t * t.ln();
                }
            }
            total += lse - dot + t_entropy;
        }
        Ok((total / n as f64, sm))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Populate gradients of every `requires_grad` node reachable from `loss`.
    /// Consumes the tape: a second call without a fresh forward pass errors.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires || self.nodes[i].grad.is_none() {
                continue;
            }
            let g = self.nodes[i].grad.take().unwrap();
            self.propagate(i, &g)?;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires {
            return;
        }
        let numel = self.nodes[v.0].value.numel();
        let buf = self.nodes[v.0]
            .grad
            .get_or_insert_with(|| vec![0.0; numel]);
        delta(buf);
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&mut self, idx: usize, g: &[f64]) -> Result<()> {
        // Rule data is cloned out where cheap; values are read via raw index
        // to sidestep borrow conflicts with accumulate.
        let rule = std::mem::replace(&mut self.nodes[idx].rule, Rule::Leaf);
        match &rule {
            Rule::Leaf => {}
            Rule::Matmul { a, b } => {
                let (n, m) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let p = self.nodes[b.0].value.cols();
                if self.nodes[a.0].requires {
                    let bd = self.nodes[b.0].value.data().to_vec();
                    self.accumulate(*a, |da| {
                        for i in 0..n {
                            for k in 0..m {
                                let mut s = 0.0;
                                for j in 0..p {
                                    s += g[i * p + j] * bd[k * p + j];
                                }
                                da[i * m + k] += s;
                            }
                        }
                    });
                }
                if self.nodes[b.0].requires {
                    let ad = self.nodes[a.0].value.data().to_vec();
                    self.accumulate(*b, |db| {
                        for k in 0..m {
                            for i in 0..n {
                                let aik = ad[i * m + k];
                                if aik == 0.0 {
                                    continue;
                                }
                                for j in 0..p {
                                    db[k * p + j] += aik * g[i * p + j];
                                }
                            }
                        }
                    });
                }
            }
            Rule::Transpose { x } => {
                let (n, m) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                self.accumulate(*x, |dx| {
                    for i in 0..n {
                        for j in 0..m {
                            dx[i * m + j] += g[j * n + i];
                        }
                    }
                });
            }
            Rule::Add { a, b } => {
                self.accumulate(*a, |da| add_into(da, g, 1.0));
                self.accumulate(*b, |db| add_into(db, g, 1.0));
            }
            Rule::AddRow { a, b } => {
                let c = self.nodes[b.0].value.numel();
                self.accumulate(*a, |da| add_into(da, g, 1.0));
                self.accumulate(*b, |db| {
                    for (j, d) in db.iter_mut().enumerate() {
                        let mut s = 0.0;
                        let mut k = j;
                        while k < g.len() {
                            s += g[k];
                            k += c;
                        }
                        *d += s;
                    }
                });
            }
            Rule::Sub { a, b } => {
                self.accumulate(*a, |da| add_into(da, g, 1.0));
                self.accumulate(*b, |db| add_into(db, g, -1.0));
            }
            Rule::Mul { a, b } => {
                if self.nodes[a.0].requires {
                    let bd = self.nodes[b.0].value.data().to_vec();
                    self.accumulate(*a, |da| {
                        for i in 0..da.len() {
                            da[i] += g[i] * bd[i];
                        }
                    });
                }
                if self.nodes[b.0].requires {
                    let ad = self.nodes[a.0].value.data().to_vec();
                    self.accumulate(*b, |db| {
                        for i in 0..db.len() {
                            db[i] += g[i] * ad[i];
                        }
                    });
                }
            }
            Rule::MulRow { a, b } => {
                let c = self.nodes[b.0].value.numel();
                if self.nodes[a.0].requires {
                    let bd = self.nodes[b.0].value.data().to_vec();
                    self.accumulate(*a, |da| {
                        for i in 0..da.len() {
                            da[i] += g[i] * bd[i % c];
                        }
                    });
                }
                if self.nodes[b.0].requires {
                    let ad = self.nodes[a.0].value.data().to_vec();
                    self.accumulate(*b, |db| {
                        for (j, d) in db.iter_mut().enumerate() {
                            let mut s = 0.0;
                            let mut k = j;
                            while k < g.len() {
                                s += g[k] * ad[k];
                                k += c;
                            }
                            *d += s;
                        }
                    });
                }
            }
            Rule::Scale { x, c } => {
                let c = *c;
                self.accumulate(*x, |dx| add_into(dx, g, c));
            }
            Rule::Relu { x } => {
                let xd = self.nodes[x.0].value.data().to_vec();
                self.accumulate(*x, |dx| {
                    for i in 0..dx.len() {
                        if xd[i] > 0.0 {
                            dx[i] += g[i];
                        }
                    }
                });
            }
            Rule::Gelu { x } => {
                let xd = self.nodes[x.0].value.data().to_vec();
                self.accumulate(*x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * gelu_bwd(xd[i]);
                    }
                });
            }
            Rule::Softmax { x } => {
                let y = self.nodes[idx].value.data().to_vec();
                let c = self.nodes[idx].value.cols();
                self.accumulate(*x, |dx| {
                    for (i, (yr, gr)) in y.chunks(c).zip(g.chunks(c)).enumerate() {
                        let dot: f64 = gr.iter().zip(yr).map(|(gv, yv)| gv * yv).sum();
                        for j in 0..c {
                            dx[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Rule::LayerNorm { x } => {
                let xd = self.nodes[x.0].value.data().to_vec();
                let c = self.nodes[x.0].value.cols();
                self.accumulate(*x, |dx| {
                    for (i, row) in xd.chunks(c).enumerate() {
                        let (mean, inv_std) = layernorm_stats(row);
                        let gr = &g[i * c..(i + 1) * c];
                        let g_mean: f64 = gr.iter().sum::<f64>() / c as f64;
                        let mut gx_mean = 0.0;
                        for j in 0..c {
                            gx_mean += gr[j] * (row[j] - mean) * inv_std;
                        }
                        gx_mean /= c as f64;
                        for j in 0..c {
                            let xh = (row[j] - mean) * inv_std;
                            dx[i * c + j] += (gr[j] - g_mean - xh * gx_mean) * inv_std;
                        }
                    }
                });
            }
            Rule::Gather { x, ids } => {
                let c = self.nodes[x.0].value.cols();
                let ids = ids.clone();
                self.accumulate(*x, |dx| {
                    for (out_row, &src) in ids.iter().enumerate() {
                        for j in 0..c {
                            dx[src * c + j] += g[out_row * c + j];
                        }
                    }
                });
            }
            Rule::ConcatRows { a, b } => {
                let na = self.nodes[a.0].value.numel();
                self.accumulate(*a, |da| add_into(da, &g[..na], 1.0));
                self.accumulate(*b, |db| add_into(db, &g[na..], 1.0));
            }
            Rule::ConcatCols { a, b } => {
                let ca = self.nodes[a.0].value.cols();
                let cb = self.nodes[b.0].value.cols();
                let n = self.nodes[a.0].value.rows();
                self.accumulate(*a, |da| {
                    for i in 0..n {
                        for j in 0..ca {
                            da[i * ca + j] += g[i * (ca + cb) + j];
                        }
                    }
                });
                self.accumulate(*b, |db| {
                    for i in 0..n {
                        for j in 0..cb {
                            db[i * cb + j] += g[i * (ca + cb) + ca + j];
                        }
                    }
                });
            }
            Rule::SliceRows { x, start } => {
                let c = self.nodes[x.0].value.cols();
                let off = start * c;
                self.accumulate(*x, |dx| add_into(&mut dx[off..off + g.len()], g, 1.0));
            }
            Rule::SliceCols { x, start } => {
                let c = self.nodes[x.0].value.cols();
                let w = self.nodes[idx].value.cols();
                let start = *start;
                let n = self.nodes[idx].value.rows();
                self.accumulate(*x, |dx| {
                    for i in 0..n {
                        for j in 0..w {
                            dx[i * c + start + j] += g[i * w + j];
                        }
                    }
                });
            }
            Rule::Reshape { x } => {
                self.accumulate(*x, |dx| add_into(dx, g, 1.0));
            }
            Rule::SumAll { x } => {
                let gv = g[0];
                self.accumulate(*x, |dx| {
                    for d in dx.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Rule::MeanAll { x } => {
                let n = self.nodes[x.0].value.numel() as f64;
                let gv = g[0] / n;
                self.accumulate(*x, |dx| {
                    for d in dx.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Rule::MeanRows { x } => {
                let n = self.nodes[x.0].value.rows();
                let c = self.nodes[x.0].value.cols();
                self.accumulate(*x, |dx| {
                    for i in 0..n {
                        for j in 0..c {
                            dx[i * c + j] += g[j] / n as f64;
                        }
                    }
                });
            }
            Rule::CrossEntropy { logits, sm, target } | Rule::KlDiv { logits, sm, target } => {
                let n = self.nodes[logits.0].value.rows();
                let gv = g[0] / n as f64;
                let sm = sm.clone();
                let target = target.clone();
                self.accumulate(*logits, |dz| {
                    for i in 0..dz.len() {
                        dz[i] += gv * (sm[i] - target[i]);
                    }
                });
            }
        }
        self.nodes[idx].rule = rule;
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

fn layernorm_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LN_EPS).sqrt())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_bwd(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn softmax_uniform_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[0.0, 0.0, 0.0]));
        let y = tape.softmax_rows(x).unwrap();
        for &v in tape.value(y).data() {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_shift_invariance_is_bitwise() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[0.3, -1.2, 2.5, 0.0]));
        let shifted = tape.constant(Tensor::row(&[0.3 + 7.0, -1.2 + 7.0, 2.5 + 7.0, 7.0]));
        let a = tape.softmax_rows(x).unwrap();
        let b = tape.softmax_rows(shifted).unwrap();
        assert_eq!(tape.value(a).data(), tape.value(b).data());
    }

    #[test]
    fn softmax_matches_scalar_oracle() {
        // independent high-precision evaluation of exp/sum for [1,2,3]
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[1.0, 2.0, 3.0]));
        let y = tape.softmax_rows(x).unwrap();
        let expect = [0.090_030_573_170_380_46, 0.244_728_471_054_797_7, 0.665_240_955_774_821_8];
        for (v, e) in tape.value(y).data().iter().zip(expect) {
            assert!(close(*v, e, 1e-12), "{v} vs {e}");
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[5.0, 1.0, -2.0, 100.0]));
        let y = tape
            .softmax_rows_masked(x, &[true, true, true, false])
            .unwrap();
        let d = tape.value(y).data();
        assert_eq!(d[3], 0.0);
        assert!(close(d.iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn softmax_cross_entropy_grad_is_p_minus_y() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::row(&[0.2, -0.4, 1.1]), true);
        let target = Tensor::row(&[0.0, 1.0, 0.0]);
        let loss = tape.cross_entropy(z, &target).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(z).unwrap();
        let mut sm_tape = Tape::new();
        let z2 = sm_tape.constant(Tensor::row(&[0.2, -0.4, 1.1]));
        let p = sm_tape.softmax_rows(z2).unwrap();
        for (j, (gv, pv)) in g.iter().zip(sm_tape.value(p).data()).enumerate() {
            let y = if j == 1 { 1.0 } else { 0.0 };
            assert!(close(*gv, pv - y, 1e-12));
        }
    }

    #[test]
    fn backward_twice_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let loss = tape.mul(x, x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]), true);
        let y = tape.mul(x, x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn layernorm_rows_standardizes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.0, 7.0]).unwrap());
        let y = tape.layernorm_rows(x).unwrap();
        for i in 0..2 {
            let row = tape.value(y).row_slice(i);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap());
        let b = tape.constant(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap());
        assert!(matches!(tape.matmul(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn kl_divergence_of_identical_distributions_is_zero() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::row(&[0.7, -0.3, 1.4]));
        let p = tape.softmax_rows(logits).unwrap();
        let target = tape.value(p).clone();
        let loss = tape.kl_divergence(&target, logits).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-12);
    }
}
