//! Reverse-mode automatic differentiation over dense 2-D f64 arrays.
//!
//! Define-by-run: every training step builds a fresh [`Graph`], runs the
//! forward pass through the op constructors below, then calls
//! [`Graph::backprop`] on a scalar loss node. Node values are immutable once
//! created, nodes only reference earlier nodes (so reverse creation order is
//! a valid reverse topological order), and gradients accumulate additively
//! across all consumers of a node.
//!
//! Shape conventions: everything is a 2-D matrix. Sequences of hidden states
//! are `[t, d]` with time as the row axis, biases are `[1, d]` rows
//! broadcast over rows, scalars are `[1, 1]`.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{matmul_acc, softmax_row, Tensor};

/// Handle to a node in one [`Graph`]. Not valid across graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Gold probabilities below this are clamped before the log in
/// [`Graph::nll_gather`]; the clamp is counted and warned about once.
pub const NLL_CLAMP: f64 = 1e-12;

/// Target marker for positions excluded from the NLL sum (padding).
pub const NLL_IGNORE: usize = usize::MAX;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    /// Input node; `param` links back to a ParamSet slot for gradient export.
    Leaf { param: Option<usize> },
    MatMul { a: usize, b: usize },
    Transpose { x: usize },
    /// Same-shape add, or `b` is a `[1, c]` row broadcast over `a`'s rows.
    Add { a: usize, b: usize, broadcast: bool },
    AddScalar { x: usize },
    Mul { a: usize, b: usize },
    /// Row r of `x` scaled by `s[r]` (`s` is `[rows, 1]`) or by `s[0]` (`[1, 1]`).
    ScaleRows { x: usize, s: usize },
    Scale { x: usize, c: f64 },
    Tanh { x: usize },
    Sigmoid { x: usize },
    Relu { x: usize },
    Ln { x: usize },
    Softmax { x: usize, axis: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize },
    ConcatCols { parts: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    SliceCols { x: usize, start: usize, len: usize },
    RepeatRows { x: usize, n: usize },
    Embed { table: usize, ids: Vec<usize> },
    ScatterToVocab { attn: usize, ids: Vec<usize> },
    MeanRows { x: usize },
    SumAll { x: usize },
    /// Elementwise min; at ties the subgradient routes to the first argument.
    Min { a: usize, b: usize },
    NllGather { probs: usize, targets: Vec<usize> },
}

pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    grads: Vec<Vec<f64>>,
    nll_clamps: usize,
    clamp_warned: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            nll_clamps: 0,
            clamp_warned: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradient of the loss w.r.t. this node. Zeros before backprop runs.
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }

    /// Times a gold probability had to be clamped at [`NLL_CLAMP`].
    pub fn nll_clamp_count(&self) -> usize {
        self.nll_clamps
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let id = self.values.len();
        self.grads.push(vec![0.0; value.numel()]);
        self.values.push(value);
        self.ops.push(op);
        NodeId(id)
    }

    fn check_parent(&self, id: NodeId, op: &'static str) -> Result<()> {
        if id.0 >= self.values.len() {
            return Err(Error::shape(op, format!("node {} not in this graph", id.0)));
        }
        Ok(())
    }

    // ── Inputs ──────────────────────────────────────────────────────

    /// Constant input: no gradient is exported for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    /// Lease a parameter into the graph. Its value is copied; after
    /// [`Graph::backprop`], [`Graph::export_grads`] accumulates the node
    /// gradient back into the parameter if it is trainable.
    pub fn param(&mut self, set: &ParamSet, idx: usize) -> NodeId {
        self.push(set.get(idx).value.clone(), Op::Leaf { param: Some(idx) })
    }

    pub fn param_by_name(&mut self, set: &ParamSet, name: &str) -> Result<NodeId> {
        Ok(self.param(set, set.index_of(name)?))
    }

    // ── Ops ─────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.values[a.0].expect_matrix("matmul")?;
        let (k2, n) = self.values[b.0].expect_matrix("matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: [{m}, {k}] x [{k2}, {n}]"),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.values[a.0].data(), self.values[b.0].data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out), Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.values[x.0].expect_matrix("transpose")?;
        let src = self.values[x.0].data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(vec![c, r], out), Op::Transpose { x: x.0 }))
    }

    /// `a + b`; identical shapes, or `b` a `[1, c]` row added to every row
    /// of `a` (bias broadcast over the time axis).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.values[a.0].expect_matrix("add")?;
        let (rb, cb) = self.values[b.0].expect_matrix("add")?;
        let broadcast = rb == 1 && ra != 1;
        if ca != cb || (!broadcast && ra != rb) {
            return Err(Error::shape(
                "add",
                format!("[{ra}, {ca}] vs [{rb}, {cb}]"),
            ));
        }
        let av = self.values[a.0].data();
        let bv = self.values[b.0].data();
        let mut out = av.to_vec();
        if broadcast {
            for r in 0..ra {
                for c in 0..ca {
                    out[r * ca + c] += bv[c];
                }
            }
        } else {
            for (o, v) in out.iter_mut().zip(bv.iter()) {
                *o += v;
            }
        }
        Ok(self.push(Tensor::new(vec![ra, ca], out), Op::Add { a: a.0, b: b.0, broadcast }))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check_parent(x, "add_scalar")?;
        let mut out = self.values[x.0].clone();
        for v in out.data_mut() {
            *v += c;
        }
        Ok(self.push(out, Op::AddScalar { x: x.0 }))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.values[a.0].shape().to_vec();
        let sb = self.values[b.0].shape().to_vec();
        if sa != sb {
            return Err(Error::shape("mul", format!("{sa:?} vs {sb:?}")));
        }
        let out: Vec<f64> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Tensor::new(sa, out), Op::Mul { a: a.0, b: b.0 }))
    }

    /// Scale each row of `x` by the matching entry of `s` (`[rows, 1]`), or
    /// scale everything by `s[0]` when `s` is `[1, 1]`.
    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (r, c) = self.values[x.0].expect_matrix("scale_rows")?;
        let (rs, cs) = self.values[s.0].expect_matrix("scale_rows")?;
        if cs != 1 || (rs != r && rs != 1) {
            return Err(Error::shape(
                "scale_rows",
                format!("scales [{rs}, {cs}] incompatible with data [{r}, {c}]"),
            ));
        }
        let xv = self.values[x.0].data();
        let sv = self.values[s.0].data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let sval = if rs == 1 { sv[0] } else { sv[i] };
            for j in 0..c {
                out[i * c + j] = xv[i * c + j] * sval;
            }
        }
        Ok(self.push(Tensor::new(vec![r, c], out), Op::ScaleRows { x: x.0, s: s.0 }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check_parent(x, "scale")?;
        let mut out = self.values[x.0].clone();
        for v in out.data_mut() {
            *v *= c;
        }
        Ok(self.push(out, Op::Scale { x: x.0, c }))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_parent(x, "tanh")?;
        let mut out = self.values[x.0].clone();
        for v in out.data_mut() {
            *v = v.tanh();
        }
        Ok(self.push(out, Op::Tanh { x: x.0 }))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_parent(x, "sigmoid")?;
        let mut out = self.values[x.0].clone();
        for v in out.data_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        Ok(self.push(out, Op::Sigmoid { x: x.0 }))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_parent(x, "relu")?;
        let mut out = self.values[x.0].clone();
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        Ok(self.push(out, Op::Relu { x: x.0 }))
    }

    /// Natural log; inputs are clamped at 1e-300 so probabilities from a
    /// softmax are always in domain.
    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_parent(x, "ln")?;
        let mut out = self.values[x.0].clone();
        for v in out.data_mut() {
            *v = v.max(1e-300).ln();
        }
        Ok(self.push(out, Op::Ln { x: x.0 }))
    }

    /// Softmax over the designated axis of a 2-D tensor: axis 1 normalizes
    /// each row, axis 0 each column. Computed with max subtraction.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let (r, c) = self.values[x.0].expect_matrix("softmax")?;
        if axis > 1 {
            return Err(Error::shape("softmax", format!("axis {axis} out of range")));
        }
        let axis_len = if axis == 1 { c } else { r };
        if axis_len == 0 {
            return Err(Error::shape("softmax", "softmax over axis of length 0".to_string()));
        }
        let mut out = self.values[x.0].clone();
        if axis == 1 {
            for i in 0..r {
                softmax_row(&mut out.data_mut()[i * c..(i + 1) * c]);
            }
        } else {
            for j in 0..c {
                let mut col: Vec<f64> = (0..r).map(|i| out.at(i, j)).collect();
                softmax_row(&mut col);
                for i in 0..r {
                    out.data_mut()[i * c + j] = col[i];
                }
            }
        }
        Ok(self.push(out, Op::Softmax { x: x.0, axis }))
    }

    /// Per-row layer normalization with learned gain and shift (`[1, d]` each).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (r, c) = self.values[x.0].expect_matrix("layer_norm")?;
        let (rg, cg) = self.values[gamma.0].expect_matrix("layer_norm")?;
        let (rb, cb) = self.values[beta.0].expect_matrix("layer_norm")?;
        if rg != 1 || rb != 1 || cg != c || cb != c {
            return Err(Error::shape(
                "layer_norm",
                format!("x [{r}, {c}], gamma [{rg}, {cg}], beta [{rb}, {cb}]"),
            ));
        }
        let xv = self.values[x.0].data();
        let gv = self.values[gamma.0].data();
        let bv = self.values[beta.0].data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * rstd * gv[j] + bv[j];
            }
        }
        Ok(self.push(
            Tensor::new(vec![r, c], out),
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0 },
        ))
    }

    /// Concatenate on the feature axis: `[r, c1], [r, c2], ... -> [r, sum c]`.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs".to_string()));
        }
        let (r, _) = self.values[parts[0].0].expect_matrix("concat_cols")?;
        let mut total = 0;
        for p in parts {
            let (rp, cp) = self.values[p.0].expect_matrix("concat_cols")?;
            if rp != r {
                return Err(Error::shape("concat_cols", format!("row counts differ: {r} vs {rp}")));
            }
            total += cp;
        }
        let mut out = vec![0.0; r * total];
        let mut offset = 0;
        for p in parts {
            let t = &self.values[p.0];
            let cp = t.cols();
            for i in 0..r {
                out[i * total + offset..i * total + offset + cp].copy_from_slice(t.row_slice(i));
            }
            offset += cp;
        }
        Ok(self.push(
            Tensor::new(vec![r, total], out),
            Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect() },
        ))
    }

    /// Stack on the time axis: `[r1, c], [r2, c], ... -> [sum r, c]`.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs".to_string()));
        }
        let (_, c) = self.values[parts[0].0].expect_matrix("concat_rows")?;
        let mut total = 0;
        for p in parts {
            let (rp, cp) = self.values[p.0].expect_matrix("concat_rows")?;
            if cp != c {
                return Err(Error::shape("concat_rows", format!("col counts differ: {c} vs {cp}")));
            }
            total += rp;
        }
        let mut out = Vec::with_capacity(total * c);
        for p in parts {
            out.extend_from_slice(self.values[p.0].data());
        }
        Ok(self.push(
            Tensor::new(vec![total, c], out),
            Op::ConcatRows { parts: parts.iter().map(|p| p.0).collect() },
        ))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.values[x.0].expect_matrix("slice_cols")?;
        if start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("slice {start}..{} out of [{r}, {c}]", start + len),
            ));
        }
        let xv = self.values[x.0].data();
        let mut out = vec![0.0; r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len].copy_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Tensor::new(vec![r, len], out), Op::SliceCols { x: x.0, start, len }))
    }

    /// Tile a `[1, c]` row into `[n, c]`.
    pub fn repeat_rows(&mut self, x: NodeId, n: usize) -> Result<NodeId> {
        let (r, c) = self.values[x.0].expect_matrix("repeat_rows")?;
        if r != 1 || n == 0 {
            return Err(Error::shape("repeat_rows", format!("need [1, c] input and n > 0, got [{r}, {c}] n={n}")));
        }
        let row = self.values[x.0].data().to_vec();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(&row);
        }
        Ok(self.push(Tensor::new(vec![n, c], out), Op::RepeatRows { x: x.0, n }))
    }

    /// Embedding-row lookup: `table [v, d]` and ids of length t give `[t, d]`.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.values[table.0].expect_matrix("embed")?;
        if ids.is_empty() {
            return Err(Error::shape("embed", "empty id list".to_string()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape("embed", format!("id {bad} out of vocabulary {v}")));
        }
        let tv = self.values[table.0].data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out),
            Op::Embed { table: table.0, ids: ids.to_vec() },
        ))
    }

    /// Route attention mass over document positions into vocabulary slots:
    /// `out[r, ids[i]] += attn[r, i]`. Positions holding the same token id
    /// sum, which is the copy-distribution construction.
    pub fn scatter_to_vocab(&mut self, attn: NodeId, ids: &[usize], vocab: usize) -> Result<NodeId> {
        let (r, k) = self.values[attn.0].expect_matrix("scatter_to_vocab")?;
        if ids.len() != k {
            return Err(Error::shape(
                "scatter_to_vocab",
                format!("{k} attention columns vs {} ids", ids.len()),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape("scatter_to_vocab", format!("id {bad} out of vocabulary {vocab}")));
        }
        let av = self.values[attn.0].data();
        let mut out = vec![0.0; r * vocab];
        for i in 0..r {
            for (j, &id) in ids.iter().enumerate() {
                out[i * vocab + id] += av[i * k + j];
            }
        }
        Ok(self.push(
            Tensor::new(vec![r, vocab], out),
            Op::ScatterToVocab { attn: attn.0, ids: ids.to_vec() },
        ))
    }

    /// Mean over the time axis: `[t, d] -> [1, d]`.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.values[x.0].expect_matrix("mean_rows")?;
        if r == 0 {
            return Err(Error::shape("mean_rows", "zero rows".to_string()));
        }
        let xv = self.values[x.0].data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += xv[i * c + j];
            }
        }
        for v in &mut out {
            *v /= r as f64;
        }
        Ok(self.push(Tensor::new(vec![1, c], out), Op::MeanRows { x: x.0 }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_parent(x, "sum_all")?;
        let s: f64 = self.values[x.0].data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::SumAll { x: x.0 }))
    }

    /// Elementwise minimum of same-shape tensors. The subgradient at ties
    /// routes to the first argument.
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.values[a.0].shape().to_vec();
        let sb = self.values[b.0].shape().to_vec();
        if sa != sb {
            return Err(Error::shape("minimum", format!("{sa:?} vs {sb:?}")));
        }
        let out: Vec<f64> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| if x <= y { *x } else { *y })
            .collect();
        Ok(self.push(Tensor::new(sa, out), Op::Min { a: a.0, b: b.0 }))
    }

    /// Teacher-forced NLL: `-sum_t ln probs[t, targets[t]]` over rows whose
    /// target is not [`NLL_IGNORE`]. Gold probabilities below [`NLL_CLAMP`]
    /// are clamped and counted.
    pub fn nll_gather(&mut self, probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (r, c) = self.values[probs.0].expect_matrix("nll_gather")?;
        if targets.len() != r {
            return Err(Error::shape(
                "nll_gather",
                format!("{r} rows vs {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != NLL_IGNORE && t >= c) {
            return Err(Error::shape("nll_gather", format!("target {bad} out of {c} classes")));
        }
        let pv = self.values[probs.0].data();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t == NLL_IGNORE {
                continue;
            }
            let p = pv[i * c + t];
            if p < NLL_CLAMP {
                self.nll_clamps += 1;
                if !self.clamp_warned {
                    eprintln!("warning: gold probability {p:.3e} clamped at {NLL_CLAMP:.0e} in nll_gather");
                    self.clamp_warned = true;
                }
            }
            total -= p.max(NLL_CLAMP).ln();
        }
        Ok(self.push(Tensor::scalar(total), Op::NllGather { probs: probs.0, targets: targets.to_vec() }))
    }

    // ── Backward pass ───────────────────────────────────────────────

    /// Reverse-topological sweep seeding the scalar loss with 1.0. Every
    /// ancestor's grad buffer afterwards holds dLoss/dNode.
    pub fn backprop(&mut self, loss: NodeId) -> Result<()> {
        self.check_parent(loss, "backprop")?;
        if !self.values[loss.0].is_scalar() {
            return Err(Error::shape(
                "backprop",
                format!("loss must be scalar, got {:?}", self.values[loss.0].shape()),
            ));
        }
        for g in &mut self.grads {
            g.fill(0.0);
        }
        self.grads[loss.0][0] = 1.0;

        for i in (0..self.ops.len()).rev() {
            // Defensive: ops may only reference earlier nodes, which rules
            // out cycles by construction.
            if let Some(p) = op_parents(&self.ops[i]).into_iter().find(|&p| p >= i) {
                return Err(Error::invalid(format!("graph cycle: node {i} references node {p}")));
            }
            self.backward_op(i);
        }
        Ok(())
    }

    /// Copy accumulated gradients of leased parameter nodes back into the
    /// set. Frozen parameters are skipped, so their grads stay exactly zero.
    pub fn export_grads(&self, set: &mut ParamSet) {
        for (i, op) in self.ops.iter().enumerate() {
            if let Op::Leaf { param: Some(idx) } = op {
                if !set.get(*idx).trainable {
                    continue;
                }
                let g = &self.grads[i];
                for (dst, src) in set.get_mut(*idx).grad.data_mut().iter_mut().zip(g.iter()) {
                    *dst += src;
                }
            }
        }
    }

    fn backward_op(&mut self, i: usize) {
        // Split borrows: grads are taken apart index-wise via raw indexing.
        macro_rules! grad_of {
            ($idx:expr) => {
                std::mem::take(&mut self.grads[$idx])
            };
        }
        macro_rules! put_back {
            ($idx:expr, $g:expr) => {
                self.grads[$idx] = $g;
            };
        }

        let g_out = self.grads[i].clone();
        if g_out.iter().all(|&v| v == 0.0) {
            return;
        }

        match &self.ops[i] {
            Op::Leaf { .. } => {}

            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.values[a].rows(), self.values[a].cols());
                let n = self.values[b].cols();
                let av = self.values[a].data();
                let bv = self.values[b].data();
                let mut ga = grad_of!(a);
                // dA[i,kk] += sum_j G[i,j] * B[kk,j]
                for ii in 0..m {
                    for kk in 0..k {
                        let mut acc = 0.0;
                        let grow = &g_out[ii * n..(ii + 1) * n];
                        let brow = &bv[kk * n..(kk + 1) * n];
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        ga[ii * k + kk] += acc;
                    }
                }
                put_back!(a, ga);
                let mut gb = grad_of!(b);
                // dB[kk,j] += sum_i A[i,kk] * G[i,j]
                for ii in 0..m {
                    let grow = &g_out[ii * n..(ii + 1) * n];
                    for kk in 0..k {
                        let aik = av[ii * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        let gbrow = &mut gb[kk * n..(kk + 1) * n];
                        for j in 0..n {
                            gbrow[j] += aik * grow[j];
                        }
                    }
                }
                put_back!(b, gb);
            }

            Op::Transpose { x } => {
                let x = *x;
                let (r, c) = (self.values[x].rows(), self.values[x].cols());
                let mut gx = grad_of!(x);
                for ii in 0..r {
                    for j in 0..c {
                        gx[ii * c + j] += g_out[j * r + ii];
                    }
                }
                put_back!(x, gx);
            }

            Op::Add { a, b, broadcast } => {
                let (a, b, broadcast) = (*a, *b, *broadcast);
                let mut ga = grad_of!(a);
                for (d, s) in ga.iter_mut().zip(g_out.iter()) {
                    *d += s;
                }
                put_back!(a, ga);
                let mut gb = grad_of!(b);
                if broadcast {
                    let c = self.values[b].cols();
                    for row in g_out.chunks(c) {
                        for (j, v) in row.iter().enumerate() {
                            gb[j] += v;
                        }
                    }
                } else {
                    for (d, s) in gb.iter_mut().zip(g_out.iter()) {
                        *d += s;
                    }
                }
                put_back!(b, gb);
            }

            Op::AddScalar { x, .. } => {
                let x = *x;
                let mut gx = grad_of!(x);
                for (d, s) in gx.iter_mut().zip(g_out.iter()) {
                    *d += s;
                }
                put_back!(x, gx);
            }

            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let mut ga = grad_of!(a);
                for ((d, s), bv) in ga.iter_mut().zip(g_out.iter()).zip(self.values[b].data()) {
                    *d += s * bv;
                }
                put_back!(a, ga);
                let mut gb = grad_of!(b);
                for ((d, s), av) in gb.iter_mut().zip(g_out.iter()).zip(self.values[a].data()) {
                    *d += s * av;
                }
                put_back!(b, gb);
            }

            Op::ScaleRows { x, s } => {
                let (x, s) = (*x, *s);
                let (r, c) = (self.values[x].rows(), self.values[x].cols());
                let scalar = self.values[s].rows() == 1;
                let sv = self.values[s].data().to_vec();
                let xv = self.values[x].data();
                let mut gs_acc = vec![0.0; sv.len()];
                let mut gx = grad_of!(x);
                for ii in 0..r {
                    let sval = if scalar { sv[0] } else { sv[ii] };
                    let mut dot = 0.0;
                    for j in 0..c {
                        gx[ii * c + j] += g_out[ii * c + j] * sval;
                        dot += g_out[ii * c + j] * xv[ii * c + j];
                    }
                    gs_acc[if scalar { 0 } else { ii }] += dot;
                }
                put_back!(x, gx);
                let mut gs = grad_of!(s);
                for (d, v) in gs.iter_mut().zip(gs_acc.iter()) {
                    *d += v;
                }
                put_back!(s, gs);
            }

            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let mut gx = grad_of!(x);
                for (d, s) in gx.iter_mut().zip(g_out.iter()) {
                    *d += c * s;
                }
                put_back!(x, gx);
            }

            Op::Tanh { x } => {
                let x = *x;
                let yv = self.values[i].data();
                let mut gx = grad_of!(x);
                for ((d, s), y) in gx.iter_mut().zip(g_out.iter()).zip(yv.iter()) {
                    *d += s * (1.0 - y * y);
                }
                put_back!(x, gx);
            }

            Op::Sigmoid { x } => {
                let x = *x;
                let yv = self.values[i].data();
                let mut gx = grad_of!(x);
                for ((d, s), y) in gx.iter_mut().zip(g_out.iter()).zip(yv.iter()) {
                    *d += s * y * (1.0 - y);
                }
                put_back!(x, gx);
            }

            Op::Relu { x } => {
                let x = *x;
                let xv = self.values[x].data().to_vec();
                let mut gx = grad_of!(x);
                for ((d, s), v) in gx.iter_mut().zip(g_out.iter()).zip(xv.iter()) {
                    if *v > 0.0 {
                        *d += s;
                    }
                }
                put_back!(x, gx);
            }

            Op::Ln { x } => {
                let x = *x;
                let xv = self.values[x].data().to_vec();
                let mut gx = grad_of!(x);
                for ((d, s), v) in gx.iter_mut().zip(g_out.iter()).zip(xv.iter()) {
                    *d += s / v.max(1e-300);
                }
                put_back!(x, gx);
            }

            Op::Softmax { x, axis } => {
                let (x, axis) = (*x, *axis);
                let (r, c) = (self.values[i].rows(), self.values[i].cols());
                let yv = self.values[i].data();
                let mut gx = grad_of!(x);
                if axis == 1 {
                    for ii in 0..r {
                        let y = &yv[ii * c..(ii + 1) * c];
                        let go = &g_out[ii * c..(ii + 1) * c];
                        let dot: f64 = y.iter().zip(go.iter()).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[ii * c + j] += y[j] * (go[j] - dot);
                        }
                    }
                } else {
                    for j in 0..c {
                        let mut dot = 0.0;
                        for ii in 0..r {
                            dot += yv[ii * c + j] * g_out[ii * c + j];
                        }
                        for ii in 0..r {
                            gx[ii * c + j] += yv[ii * c + j] * (g_out[ii * c + j] - dot);
                        }
                    }
                }
                put_back!(x, gx);
            }

            Op::LayerNorm { x, gamma, beta } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let (r, c) = (self.values[x].rows(), self.values[x].cols());
                let xv = self.values[x].data().to_vec();
                let gv = self.values[gamma].data().to_vec();
                let mut gx = grad_of!(x);
                let mut gg = grad_of!(gamma);
                let mut gb = grad_of!(beta);
                for ii in 0..r {
                    let row = &xv[ii * c..(ii + 1) * c];
                    let go = &g_out[ii * c..(ii + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..c {
                        gg[j] += go[j] * xhat[j];
                        gb[j] += go[j];
                        let dxhat = go[j] * gv[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat[j];
                    }
                    mean_dxhat /= c as f64;
                    mean_dxhat_xhat /= c as f64;
                    for j in 0..c {
                        let dxhat = go[j] * gv[j];
                        gx[ii * c + j] += rstd * (dxhat - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                put_back!(x, gx);
                put_back!(gamma, gg);
                put_back!(beta, gb);
            }

            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let total = self.values[i].cols();
                let r = self.values[i].rows();
                let mut offset = 0;
                for p in parts {
                    let cp = self.values[p].cols();
                    let mut gp = grad_of!(p);
                    for ii in 0..r {
                        for j in 0..cp {
                            gp[ii * cp + j] += g_out[ii * total + offset + j];
                        }
                    }
                    put_back!(p, gp);
                    offset += cp;
                }
            }

            Op::ConcatRows { parts } => {
                let parts = parts.clone();
                let c = self.values[i].cols();
                let mut offset = 0;
                for p in parts {
                    let rp = self.values[p].rows();
                    let mut gp = grad_of!(p);
                    for (d, s) in gp.iter_mut().zip(&g_out[offset * c..(offset + rp) * c]) {
                        *d += s;
                    }
                    put_back!(p, gp);
                    offset += rp;
                }
            }

            Op::SliceCols { x, start, len } => {
                let (x, start, len) = (*x, *start, *len);
                let (r, c) = (self.values[x].rows(), self.values[x].cols());
                let mut gx = grad_of!(x);
                for ii in 0..r {
                    for j in 0..len {
                        gx[ii * c + start + j] += g_out[ii * len + j];
                    }
                }
                put_back!(x, gx);
            }

            Op::RepeatRows { x, n } => {
                let (x, n) = (*x, *n);
                let c = self.values[x].cols();
                let mut gx = grad_of!(x);
                for ii in 0..n {
                    for j in 0..c {
                        gx[j] += g_out[ii * c + j];
                    }
                }
                put_back!(x, gx);
            }

            Op::Embed { table, ids } => {
                let (table, ids) = (*table, ids.clone());
                let d = self.values[table].cols();
                let mut gt = grad_of!(table);
                for (t, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g_out[t * d + j];
                    }
                }
                put_back!(table, gt);
            }

            Op::ScatterToVocab { attn, ids } => {
                let (attn, ids) = (*attn, ids.clone());
                let (r, k) = (self.values[attn].rows(), self.values[attn].cols());
                let vocab = self.values[i].cols();
                let mut ga = grad_of!(attn);
                for ii in 0..r {
                    for (j, &id) in ids.iter().enumerate() {
                        ga[ii * k + j] += g_out[ii * vocab + id];
                    }
                }
                put_back!(attn, ga);
            }

            Op::MeanRows { x } => {
                let x = *x;
                let (r, c) = (self.values[x].rows(), self.values[x].cols());
                let inv = 1.0 / r as f64;
                let mut gx = grad_of!(x);
                for ii in 0..r {
                    for j in 0..c {
                        gx[ii * c + j] += g_out[j] * inv;
                    }
                }
                put_back!(x, gx);
            }

            Op::SumAll { x } => {
                let x = *x;
                let g = g_out[0];
                let mut gx = grad_of!(x);
                for d in gx.iter_mut() {
                    *d += g;
                }
                put_back!(x, gx);
            }

            Op::Min { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.values[a].data().to_vec();
                let bv = self.values[b].data().to_vec();
                let mut ga = grad_of!(a);
                let mut gb = grad_of!(b);
                for j in 0..av.len() {
                    if av[j] <= bv[j] {
                        ga[j] += g_out[j];
                    } else {
                        gb[j] += g_out[j];
                    }
                }
                put_back!(a, ga);
                put_back!(b, gb);
            }

            Op::NllGather { probs, targets } => {
                let (probs, targets) = (*probs, targets.clone());
                let c = self.values[probs].cols();
                let pv = self.values[probs].data().to_vec();
                let g = g_out[0];
                let mut gp = grad_of!(probs);
                for (ii, &t) in targets.iter().enumerate() {
                    if t == NLL_IGNORE {
                        continue;
                    }
                    let p = pv[ii * c + t].max(NLL_CLAMP);
                    gp[ii * c + t] += -g / p;
                }
                put_back!(probs, gp);
            }
        }
    }
}

fn op_parents(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf { .. } => vec![],
        Op::MatMul { a, b } | Op::Add { a, b, .. } | Op::Mul { a, b } | Op::Min { a, b } => {
            vec![*a, *b]
        }
        Op::ScaleRows { x, s } => vec![*x, *s],
        Op::Transpose { x }
        | Op::AddScalar { x, .. }
        | Op::Scale { x, .. }
        | Op::Tanh { x }
        | Op::Sigmoid { x }
        | Op::Relu { x }
        | Op::Ln { x }
        | Op::Softmax { x, .. }
        | Op::SliceCols { x, .. }
        | Op::RepeatRows { x, .. }
        | Op::MeanRows { x }
        | Op::SumAll { x } => vec![*x],
        Op::LayerNorm { x, gamma, beta } => vec![*x, *gamma, *beta],
        Op::ConcatCols { parts } | Op::ConcatRows { parts } => parts.clone(),
        Op::Embed { table, .. } => vec![*table],
        Op::ScatterToVocab { attn, .. } => vec![*attn],
        Op::NllGather { probs, .. } => vec![*probs],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_graph(v: f64) -> (Graph, NodeId) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(v));
        (g, x)
    }

    #[test]
    fn tanh_at_origin() {
        let (mut g, x) = scalar_graph(0.0);
        let y = g.tanh(x).unwrap();
        assert_eq!(g.value(y).scalar_value(), 0.0);
        g.backprop(y).unwrap();
        assert_eq!(g.grad(x)[0], 1.0);
    }

    #[test]
    fn sigmoid_at_origin() {
        let (mut g, x) = scalar_graph(0.0);
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).scalar_value(), 0.5);
        g.backprop(y).unwrap();
        assert_eq!(g.grad(x)[0], 0.25);
    }

    #[test]
    fn softmax_of_constant_row_is_uniform() {
        for c in [-3.0, 0.0, 7.5] {
            let mut g = Graph::new();
            let x = g.constant(Tensor::row(vec![c, c, c]));
            let y = g.softmax(x, 1).unwrap();
            for &v in g.value(y).data() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_zero_axis_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![0, 3], vec![]));
        assert!(g.softmax(x, 0).is_err());
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, -2.0, 3.0, 0.5, 9.0]));
        let loss = g.sum_all(x).unwrap();
        g.backprop(loss).unwrap();
        assert_eq!(g.grad(x), &[1.0; 5]);
    }

    #[test]
    fn mean_grad_is_quarter() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let m = g.mean_rows(x).unwrap();
        let loss = g.sum_all(m).unwrap();
        g.backprop(loss).unwrap();
        assert_eq!(g.grad(x), &[0.25; 4]);
    }

    #[test]
    fn grads_accumulate_across_consumers() {
        // x feeds two consumers; grad must equal the sum of both paths.
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(3.0));
        let a = g.scale(x, 2.0).unwrap();
        let b = g.scale(x, 5.0).unwrap();
        let s = g.add(a, b).unwrap();
        let loss = g.sum_all(s).unwrap();
        g.backprop(loss).unwrap();
        assert_eq!(g.grad(x)[0], 7.0);
    }

    #[test]
    fn matmul_shape_error_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![2, 3], vec![0.0; 6]));
        let b = g.constant(Tensor::new(vec![2, 2], vec![0.0; 4]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains('3') && err.contains('2'), "{err}");
    }

    #[test]
    fn backprop_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0]));
        assert!(g.backprop(x).is_err());
    }

    #[test]
    fn minimum_routes_ties_to_first() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(vec![1.0, 5.0]));
        let b = g.constant(Tensor::row(vec![1.0, 2.0]));
        let m = g.minimum(a, b).unwrap();
        let loss = g.sum_all(m).unwrap();
        g.backprop(loss).unwrap();
        assert_eq!(g.grad(a), &[1.0, 0.0]);
        assert_eq!(g.grad(b), &[0.0, 1.0]);
    }

    #[test]
    fn nll_gather_ignores_marked_rows() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.9, 0.1]));
        let loss = g.nll_gather(p, &[0, NLL_IGNORE]).unwrap();
        assert!((g.value(loss).scalar_value() - 0.5f64.ln().abs()).abs() < 1e-12);
    }

    #[test]
    fn scatter_sums_repeated_ids() {
        let mut g = Graph::new();
        let attn = g.constant(Tensor::row(vec![0.25, 0.25, 0.5]));
        let out = g.scatter_to_vocab(attn, &[2, 2, 0], 4).unwrap();
        assert_eq!(g.value(out).data(), &[0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn embed_rejects_out_of_vocab() {
        let mut g = Graph::new();
        let table = g.constant(Tensor::new(vec![3, 2], vec![0.0; 6]));
        assert!(g.embed(table, &[0, 3]).is_err());
    }
}
