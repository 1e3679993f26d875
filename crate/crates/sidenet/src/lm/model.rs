//! Decoder-only transformer with pre-norm blocks and learned positional
//! embeddings.
//!
//! Two forward paths exist: a plain one over raw tensors (generation,
//! cached hidden states, perplexity) and a graph one (training, and the
//! gradient-steered baseline which needs decode-time gradients). Both run
//! the same kernels in the same order, so their outputs agree bitwise; a
//! test pins that.
//!
//! Causal masking is done by adding -1e30 to future score entries before
//! the row softmax. exp underflows those entries to exactly 0.0, so a
//! position's state is a function of tokens at or before it only, bitwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::tensor::{matmul, softmax_row, Tensor};
use crate::text::vocab::{BOS_ID, EOS_ID, SEP_ID};

const MASK_NEG: f64 = -1e30;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LmConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub lmax: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { d: 64, layers: 2, heads: 2, lmax: 128 }
    }
}

#[derive(Clone, Debug)]
pub struct BaseLm {
    pub config: LmConfig,
    pub vocab_size: usize,
    pub params: ParamSet,
    frozen: bool,
}

impl BaseLm {
    pub fn new(config: LmConfig, vocab_size: usize, seed: u64) -> Self {
        assert!(config.d % config.heads == 0, "d must divide evenly into heads");
        let mut rng = Rng::derive(seed, "base-init");
        let d = config.d;
        let mut p = ParamSet::new();
        p.add("embed.token", Tensor::init_uniform(vocab_size, d, d, &mut rng), true);
        p.add("embed.pos", Tensor::init_uniform(config.lmax, d, d, &mut rng), true);
        for l in 0..config.layers {
            p.add(format!("block{l}.ln1.gamma"), Tensor::new(vec![1, d], vec![1.0; d]), true);
            p.add(format!("block{l}.ln1.beta"), Tensor::zeros(vec![1, d]), true);
            for name in ["wq", "wk", "wv", "wo"] {
                p.add(
                    format!("block{l}.attn.{name}"),
                    Tensor::init_uniform(d, d, d, &mut rng),
                    true,
                );
            }
            p.add(format!("block{l}.ln2.gamma"), Tensor::new(vec![1, d], vec![1.0; d]), true);
            p.add(format!("block{l}.ln2.beta"), Tensor::zeros(vec![1, d]), true);
            p.add(format!("block{l}.ffn.w1"), Tensor::init_uniform(d, 4 * d, d, &mut rng), true);
            p.add(format!("block{l}.ffn.b1"), Tensor::zeros(vec![1, 4 * d]), true);
            p.add(format!("block{l}.ffn.w2"), Tensor::init_uniform(4 * d, d, 4 * d, &mut rng), true);
            p.add(format!("block{l}.ffn.b2"), Tensor::zeros(vec![1, d]), true);
        }
        p.add("final_norm.gamma", Tensor::new(vec![1, d], vec![1.0; d]), true);
        p.add("final_norm.beta", Tensor::zeros(vec![1, d]), true);
        p.add("head.w_vocab", Tensor::init_uniform(d, vocab_size, d, &mut rng), true);
        BaseLm { config, vocab_size, params: p, frozen: false }
    }

    pub fn from_params(config: LmConfig, vocab_size: usize, params: ParamSet) -> Result<Self> {
        let frozen = params.all_frozen();
        params.by_name("head.w_vocab")?;
        Ok(BaseLm { config, vocab_size, params, frozen })
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    /// Freeze every parameter. The base network stays fixed through all
    /// side training; a frozen model is never unfrozen in place.
    pub fn freeze(&mut self) {
        self.params.freeze_all();
        self.frozen = true;
    }

    // ── Plain forward ───────────────────────────────────────────────

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::invalid("empty token sequence"));
        }
        if len > self.config.lmax {
            return Err(Error::invalid(format!(
                "sequence length {len} exceeds maximum {}",
                self.config.lmax
            )));
        }
        Ok(())
    }

    /// Final-block (post final-norm) states for every position: `[L, d]`.
    pub fn forward_states(&self, tokens: &[usize]) -> Result<Tensor> {
        self.check_len(tokens.len())?;
        let d = self.config.d;
        let len = tokens.len();
        let tok = &self.params.by_name("embed.token")?.value;
        let pos = &self.params.by_name("embed.pos")?.value;
        let mut x = Tensor::zeros(vec![len, d]);
        for (t, &id) in tokens.iter().enumerate() {
            if id >= self.vocab_size {
                return Err(Error::invalid(format!("token id {id} out of vocabulary")));
            }
            for j in 0..d {
                x.data_mut()[t * d + j] = tok.at(id, j) + pos.at(t, j);
            }
        }
        for l in 0..self.config.layers {
            x = self.block_plain(&x, l)?;
        }
        Ok(self.norm_plain(&x, "final_norm")?)
    }

    fn norm_plain(&self, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let gamma = &self.params.by_name(&format!("{prefix}.gamma"))?.value;
        let beta = &self.params.by_name(&format!("{prefix}.beta"))?.value;
        Ok(layer_norm_plain(x, gamma, beta))
    }

    fn block_plain(&self, x: &Tensor, l: usize) -> Result<Tensor> {
        let d = self.config.d;
        let heads = self.config.heads;
        let dh = d / heads;
        let len = x.rows();
        let normed = self.norm_plain(x, &format!("block{l}.ln1"))?;
        let q = matmul(&normed, &self.params.by_name(&format!("block{l}.attn.wq"))?.value);
        let k = matmul(&normed, &self.params.by_name(&format!("block{l}.attn.wk"))?.value);
        let v = matmul(&normed, &self.params.by_name(&format!("block{l}.attn.wv"))?.value);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads_out = Tensor::zeros(vec![len, d]);
        for h in 0..heads {
            let off = h * dh;
            // scores[i][j] = q_i . k_j * scale, masked to j <= i
            for i in 0..len {
                let mut row = vec![0.0; len];
                for (j, r) in row.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += q.at(i, off + c) * k.at(j, off + c);
                    }
                    *r = dot * scale + if j > i { MASK_NEG } else { 0.0 };
                }
                softmax_row(&mut row);
                for c in 0..dh {
                    let mut acc = 0.0;
                    for (j, w) in row.iter().enumerate() {
                        acc += w * v.at(j, off + c);
                    }
                    heads_out.data_mut()[i * d + off + c] = acc;
                }
            }
        }
        let attn = matmul(&heads_out, &self.params.by_name(&format!("block{l}.attn.wo"))?.value);
        let mut x1 = x.clone();
        for (a, b) in x1.data_mut().iter_mut().zip(attn.data()) {
            *a += b;
        }
        let normed2 = self.norm_plain(&x1, &format!("block{l}.ln2"))?;
        let h1 = matmul(&normed2, &self.params.by_name(&format!("block{l}.ffn.w1"))?.value);
        let b1 = &self.params.by_name(&format!("block{l}.ffn.b1"))?.value;
        let mut h1 = h1;
        for i in 0..len {
            for j in 0..4 * d {
                let v = h1.data_mut()[i * 4 * d + j] + b1.data()[j];
                h1.data_mut()[i * 4 * d + j] = v.max(0.0);
            }
        }
        let h2 = matmul(&h1, &self.params.by_name(&format!("block{l}.ffn.w2"))?.value);
        let b2 = &self.params.by_name(&format!("block{l}.ffn.b2"))?.value;
        let mut out = x1;
        for i in 0..len {
            for j in 0..d {
                out.data_mut()[i * d + j] += h2.at(i, j) + b2.data()[j];
            }
        }
        Ok(out)
    }

    /// softmax(h . W_vocab) for one state row. Errors on non-finite input.
    pub fn next_token_dist(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite hidden state in next_token_dist"));
        }
        let w = &self.params.by_name("head.w_vocab")?.value;
        let mut logits = vec![0.0; self.vocab_size];
        for (c, l) in logits.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, s) in state.iter().enumerate() {
                acc += s * w.at(j, c);
            }
            *l = acc;
        }
        softmax_row(&mut logits);
        Ok(logits)
    }

    /// Teacher-forced base representations for a response: row t is the
    /// final hidden state at the position whose next-token target is y_t
    /// (the position of y_{t-1}, or of BOS for t = 1). Shape `[T, d]`.
    pub fn hidden_states(&self, context: &[Vec<usize>], response: &[usize]) -> Result<Tensor> {
        let t_len = response.len();
        if t_len == 0 {
            return Err(Error::invalid("empty response"));
        }
        // The state of the last response token is not needed, so it is not
        // fed; EOS prediction states come from response_prediction_states.
        let (tokens, bos_idx) =
            pack_sequence(context, &response[..t_len - 1], self.config.lmax, t_len)?;
        let states = self.forward_states(&tokens)?;
        Ok(extract_rows(&states, bos_idx, t_len))
    }

    /// Like [`BaseLm::hidden_states`] but with one extra row for predicting
    /// the terminal EOS, matching the packed training targets.
    pub fn response_prediction_states(
        &self,
        context: &[Vec<usize>],
        response: &[usize],
    ) -> Result<Tensor> {
        let (tokens, bos_idx) = pack_sequence(context, response, self.config.lmax, 1)?;
        let states = self.forward_states(&tokens)?;
        Ok(extract_rows(&states, bos_idx, response.len() + 1))
    }

    // ── Graph forward (training and gradient steering) ──────────────

    /// Forward through the transformer inside an autodiff graph. `delta`
    /// optionally adds a `[w, d]` perturbation to the block-input states
    /// starting at `start` (the gradient-steered baseline's handle).
    pub fn forward_states_graph(
        &self,
        g: &mut Graph,
        tokens: &[usize],
        delta: Option<(usize, NodeId)>,
    ) -> Result<NodeId> {
        self.check_len(tokens.len())?;
        let d = self.config.d;
        let len = tokens.len();
        let tok = g.param_by_name(&self.params, "embed.token")?;
        let embedded = g.embed(tok, tokens)?;
        let pos_all = g.param_by_name(&self.params, "embed.pos")?;
        let positions: Vec<usize> = (0..len).collect();
        let pos = g.embed(pos_all, &positions)?;
        let mut x = g.add(embedded, pos)?;
        if let Some((start, dnode)) = delta {
            let w = g.value(dnode).rows();
            if start + w > len {
                return Err(Error::shape("forward_states_graph", format!(
                    "delta rows {start}..{} out of sequence length {len}",
                    start + w
                )));
            }
            let mut parts = Vec::new();
            if start > 0 {
                parts.push(g.constant(Tensor::zeros(vec![start, d])));
            }
            parts.push(dnode);
            if start + w < len {
                parts.push(g.constant(Tensor::zeros(vec![len - start - w, d])));
            }
            let padded = g.concat_rows(&parts)?;
            x = g.add(x, padded)?;
        }
        for l in 0..self.config.layers {
            x = self.block_graph(g, x, l)?;
        }
        self.norm_graph(g, x, "final_norm")
    }

    fn norm_graph(&self, g: &mut Graph, x: NodeId, prefix: &str) -> Result<NodeId> {
        let gamma = g.param_by_name(&self.params, &format!("{prefix}.gamma"))?;
        let beta = g.param_by_name(&self.params, &format!("{prefix}.beta"))?;
        g.layer_norm(x, gamma, beta)
    }

    fn block_graph(&self, g: &mut Graph, x: NodeId, l: usize) -> Result<NodeId> {
        let d = self.config.d;
        let heads = self.config.heads;
        let dh = d / heads;
        let len = g.value(x).rows();
        let normed = self.norm_graph(g, x, &format!("block{l}.ln1"))?;
        let wq = g.param_by_name(&self.params, &format!("block{l}.attn.wq"))?;
        let wk = g.param_by_name(&self.params, &format!("block{l}.attn.wk"))?;
        let wv = g.param_by_name(&self.params, &format!("block{l}.attn.wv"))?;
        let q = g.matmul(normed, wq)?;
        let k = g.matmul(normed, wk)?;
        let v = g.matmul(normed, wv)?;
        let mask = g.constant(causal_mask(len));
        let mut per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let masked = g.add(scaled, mask)?;
            let attn = g.softmax(masked, 1)?;
            per_head.push(g.matmul(attn, vh)?);
        }
        let merged = g.concat_cols(&per_head)?;
        let wo = g.param_by_name(&self.params, &format!("block{l}.attn.wo"))?;
        let proj = g.matmul(merged, wo)?;
        let x1 = g.add(x, proj)?;
        let normed2 = self.norm_graph(g, x1, &format!("block{l}.ln2"))?;
        let w1 = g.param_by_name(&self.params, &format!("block{l}.ffn.w1"))?;
        let b1 = g.param_by_name(&self.params, &format!("block{l}.ffn.b1"))?;
        let w2 = g.param_by_name(&self.params, &format!("block{l}.ffn.w2"))?;
        let b2 = g.param_by_name(&self.params, &format!("block{l}.ffn.b2"))?;
        let h1 = g.matmul(normed2, w1)?;
        let h1 = g.add(h1, b1)?;
        let h1 = g.relu(h1)?;
        let h2 = g.matmul(h1, w2)?;
        let h2 = g.add(h2, b2)?;
        g.add(x1, h2)
    }

    /// Per-position next-token distributions inside a graph: `[L, |V|]`.
    pub fn dist_graph(&self, g: &mut Graph, states: NodeId) -> Result<NodeId> {
        let w = g.param_by_name(&self.params, "head.w_vocab")?;
        let logits = g.matmul(states, w)?;
        g.softmax(logits, 1)
    }
}

/// Same per-row normalization as the graph op; kept in lockstep with it.
pub fn layer_norm_plain(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(vec![r, c]);
    for i in 0..r {
        let row = x.row_slice(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..c {
            out.data_mut()[i * c + j] = (row[j] - mean) * rstd * gamma.data()[j] + beta.data()[j];
        }
    }
    out
}

fn causal_mask(len: usize) -> Tensor {
    let mut m = Tensor::zeros(vec![len, len]);
    for i in 0..len {
        for j in (i + 1)..len {
            m.data_mut()[i * len + j] = MASK_NEG;
        }
    }
    m
}

pub fn extract_rows(states: &Tensor, start: usize, n: usize) -> Tensor {
    let d = states.cols();
    let mut out = Tensor::zeros(vec![n, d]);
    for i in 0..n {
        out.data_mut()[i * d..(i + 1) * d].copy_from_slice(states.row_slice(start + i));
    }
    out
}

/// Pack one example into the LM sequence `context SEP BOS response EOS`:
/// context utterances joined with SEP, then SEP BOS, the response, EOS.
/// Context tokens are dropped from the front to fit `lmax` (keeping
/// `reserve` positions free beyond the response); a response that still
/// cannot fit is truncated at its tail. Returns the tokens and the index
/// of BOS.
pub fn pack_sequence(
    context: &[Vec<usize>],
    response: &[usize],
    lmax: usize,
    reserve: usize,
) -> Result<(Vec<usize>, usize)> {
    let mut ctx = Vec::new();
    for (i, utt) in context.iter().enumerate() {
        if i > 0 {
            ctx.push(SEP_ID);
        }
        ctx.extend_from_slice(utt);
    }
    let budget = lmax.saturating_sub(reserve);
    // [SEP, BOS] + response (+ EOS as a predicted target, hence `reserve`).
    let overhead = 2 + response.len();
    if overhead > budget {
        let keep = budget.saturating_sub(2);
        let mut tokens = vec![SEP_ID, BOS_ID];
        tokens.extend_from_slice(&response[..keep.min(response.len())]);
        if tokens.len() > lmax {
            return Err(Error::invalid(format!(
                "sequence of length {} cannot fit lmax {lmax}",
                tokens.len()
            )));
        }
        return Ok((tokens, 1));
    }
    let ctx_keep = (budget - overhead).min(ctx.len());
    let mut tokens = Vec::with_capacity(ctx_keep + overhead);
    tokens.extend_from_slice(&ctx[ctx.len() - ctx_keep..]);
    tokens.push(SEP_ID);
    tokens.push(BOS_ID);
    let bos_idx = tokens.len() - 1;
    tokens.extend_from_slice(response);
    Ok((tokens, bos_idx))
}

/// Prefix for autoregressive decoding: packed context plus SEP BOS, with
/// room left for `max_len` generated tokens.
pub fn pack_generation_prefix(
    context: &[Vec<usize>],
    lmax: usize,
    max_len: usize,
) -> Result<Vec<usize>> {
    let (tokens, _) = pack_sequence(context, &[], lmax, max_len)?;
    Ok(tokens)
}

/// Next-token targets for a packed sequence: position i predicts
/// tokens[i + 1], and the final position predicts EOS.
pub fn lm_targets(tokens: &[usize]) -> Vec<usize> {
    let mut t: Vec<usize> = tokens[1..].to_vec();
    t.push(EOS_ID);
    t
}
