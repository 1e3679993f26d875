//! Knowledge-document control.
//!
//! The document tokens are embedded with the frozen base embedding table
//! and encoded by a single-layer bidirectional LSTM whose concatenated
//! state matches the base hidden size. Per decoding step the side network
//! cross-attends the document against the base state, fuses a side
//! representation with a per-step mixture gate, and mixes the head
//! distribution with the attention-derived copy distribution through a
//! copy gate. The control loss penalizes attending the same document
//! position the attention has already covered.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::lm::model::BaseLm;
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::tensor::{matmul, softmax_row, Tensor};

#[derive(Clone, Debug)]
pub struct KnowledgeSideNet {
    pub d: usize,
    pub params: ParamSet,
}

impl KnowledgeSideNet {
    pub fn new(d: usize, seed: u64) -> Self {
        assert!(d % 2 == 0, "hidden size must be even for the two LSTM directions");
        let h = d / 2;
        let mut rng = Rng::derive(seed, "knowledge-side-init");
        let mut p = ParamSet::new();
        for dir in ["fwd", "bwd"] {
            p.add(format!("lstm.{dir}.w_ih"), Tensor::init_uniform(d, 4 * h, d, &mut rng), true);
            p.add(format!("lstm.{dir}.w_hh"), Tensor::init_uniform(h, 4 * h, h, &mut rng), true);
            p.add(format!("lstm.{dir}.bias"), Tensor::zeros(vec![1, 4 * h]), true);
        }
        p.add("attn.key_proj", Tensor::init_uniform(d, d, d, &mut rng), true);
        p.add("attn.query_proj", Tensor::init_uniform(d, d, d, &mut rng), true);
        p.add("attn.bias", Tensor::zeros(vec![1, d]), true);
        p.add("attn.score", Tensor::init_uniform(d, 1, d, &mut rng), true);
        p.add("fuse.weight", Tensor::init_uniform(2 * d, d, 2 * d, &mut rng), true);
        p.add("fuse.bias", Tensor::zeros(vec![1, d]), true);
        p.add("mix.weight", Tensor::init_uniform(2 * d, 1, 2 * d, &mut rng), true);
        p.add("mix.bias", Tensor::zeros(vec![1, 1]), true);
        p.add("copy_gate.weight", Tensor::init_uniform(2 * d, 1, 2 * d, &mut rng), true);
        p.add("copy_gate.bias", Tensor::zeros(vec![1, 1]), true);
        KnowledgeSideNet { d, params: p }
    }

    pub fn from_params(d: usize, params: ParamSet) -> Self {
        KnowledgeSideNet { d, params }
    }

    // ── Graph forward (training) ────────────────────────────────────

    fn lstm_direction_graph(
        &self,
        g: &mut Graph,
        rows: &[NodeId],
        dir: &str,
    ) -> Result<Vec<NodeId>> {
        let h = self.d / 2;
        let w_ih = g.param_by_name(&self.params, &format!("lstm.{dir}.w_ih"))?;
        let w_hh = g.param_by_name(&self.params, &format!("lstm.{dir}.w_hh"))?;
        let bias = g.param_by_name(&self.params, &format!("lstm.{dir}.bias"))?;
        let mut h_prev = g.constant(Tensor::zeros(vec![1, h]));
        let mut c_prev = g.constant(Tensor::zeros(vec![1, h]));
        let mut out = Vec::with_capacity(rows.len());
        for &x in rows {
            let xi = g.matmul(x, w_ih)?;
            let hi = g.matmul(h_prev, w_hh)?;
            let pre = g.add(xi, hi)?;
            let gates = g.add(pre, bias)?;
            let i_gate = g.slice_cols(gates, 0, h)?;
            let f_gate = g.slice_cols(gates, h, h)?;
            let g_gate = g.slice_cols(gates, 2 * h, h)?;
            let o_gate = g.slice_cols(gates, 3 * h, h)?;
            let i_gate = g.sigmoid(i_gate)?;
            let f_gate = g.sigmoid(f_gate)?;
            let g_gate = g.tanh(g_gate)?;
            let o_gate = g.sigmoid(o_gate)?;
            let keep = g.mul(f_gate, c_prev)?;
            let write = g.mul(i_gate, g_gate)?;
            let c = g.add(keep, write)?;
            let c_act = g.tanh(c)?;
            let h_new = g.mul(o_gate, c_act)?;
            out.push(h_new);
            h_prev = h_new;
            c_prev = c;
        }
        Ok(out)
    }

    /// BiLSTM document encoding: `[K, d]`, forward and backward direction
    /// states concatenated per position.
    pub fn encode_knowledge_graph(&self, g: &mut Graph, doc_emb: &Tensor) -> Result<NodeId> {
        let k = doc_emb.rows();
        if k == 0 {
            return Err(Error::invalid("empty knowledge document"));
        }
        let rows: Vec<NodeId> = (0..k)
            .map(|i| g.constant(Tensor::row(doc_emb.row_slice(i).to_vec())))
            .collect();
        let fwd = self.lstm_direction_graph(g, &rows, "fwd")?;
        let rev_rows: Vec<NodeId> = rows.iter().rev().copied().collect();
        let mut bwd = self.lstm_direction_graph(g, &rev_rows, "bwd")?;
        bwd.reverse();
        let per_pos: Vec<NodeId> = fwd
            .iter()
            .zip(bwd.iter())
            .map(|(&f, &b)| g.concat_cols(&[f, b]))
            .collect::<Result<_>>()?;
        g.concat_rows(&per_pos)
    }

    /// One teacher-forced pass over a response. `h_b` and `w_vocab` enter
    /// the graph as constants: no gradient ever reaches base parameters.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        doc_emb: &Tensor,
        doc_ids: &[usize],
        h_b: &Tensor,
        w_vocab: &Tensor,
        overrides: Option<(Option<f64>, Option<f64>)>,
    ) -> Result<KnowledgeForward> {
        let vocab = w_vocab.cols();
        let t_len = h_b.rows();
        let h_k = self.encode_knowledge_graph(g, doc_emb)?;
        let key_proj = g.param_by_name(&self.params, "attn.key_proj")?;
        let query_proj = g.param_by_name(&self.params, "attn.query_proj")?;
        let attn_bias = g.param_by_name(&self.params, "attn.bias")?;
        let score_vec = g.param_by_name(&self.params, "attn.score")?;
        let fuse_w = g.param_by_name(&self.params, "fuse.weight")?;
        let fuse_b = g.param_by_name(&self.params, "fuse.bias")?;
        let mix_w = g.param_by_name(&self.params, "mix.weight")?;
        let mix_b = g.param_by_name(&self.params, "mix.bias")?;
        let gate_w = g.param_by_name(&self.params, "copy_gate.weight")?;
        let gate_b = g.param_by_name(&self.params, "copy_gate.bias")?;
        let wv = g.constant(w_vocab.clone());
        let keys = g.matmul(h_k, key_proj)?;

        let (force_alpha, force_beta) = overrides.unwrap_or((None, None));
        let mut finals = Vec::with_capacity(t_len);
        let mut alphas = Vec::with_capacity(t_len);
        let mut betas = Vec::with_capacity(t_len);
        let mut attention = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let hb_t = g.constant(Tensor::row(h_b.row_slice(t).to_vec()));
            // e_i = score . tanh(W_k h_k_i + W_b h_b + b)
            let q = g.matmul(hb_t, query_proj)?;
            let q = g.add(q, attn_bias)?;
            let pre = g.add(keys, q)?;
            let act = g.tanh(pre)?;
            let scores = g.matmul(act, score_vec)?;
            let scores_row = g.transpose(scores)?;
            let a_t = g.softmax(scores_row, 1)?;
            let c_t = g.matmul(a_t, h_k)?;

            let fuse_in = g.concat_cols(&[c_t, hb_t])?;
            let fused = g.matmul(fuse_in, fuse_w)?;
            let fused = g.add(fused, fuse_b)?;
            let h_s = g.tanh(fused)?;

            let mix_in = g.concat_cols(&[h_s, hb_t])?;
            let mix_pre = g.matmul(mix_in, mix_w)?;
            let mix_pre = g.add(mix_pre, mix_b)?;
            let alpha = match force_alpha {
                Some(v) => g.constant(Tensor::scalar(v)),
                None => g.sigmoid(mix_pre)?,
            };
            let h_t = fuse_states(g, hb_t, h_s, alpha)?;

            let logits = g.matmul(h_t, wv)?;
            let p_gen = g.softmax(logits, 1)?;

            let gate_in = g.concat_cols(&[c_t, hb_t])?;
            let gate_pre = g.matmul(gate_in, gate_w)?;
            let gate_pre = g.add(gate_pre, gate_b)?;
            let beta = match force_beta {
                Some(v) => g.constant(Tensor::scalar(v)),
                None => g.sigmoid(gate_pre)?,
            };
            let final_t = mix_copy(g, p_gen, a_t, beta, doc_ids, vocab)?;

            finals.push(final_t);
            alphas.push(alpha);
            betas.push(beta);
            attention.push(a_t);
        }
        let final_probs = g.concat_rows(&finals)?;
        let coverage = coverage_loss_graph(g, &attention)?;
        Ok(KnowledgeForward { final_probs, alphas, betas, attention, coverage })
    }

    // ── Plain forward (decoding) ────────────────────────────────────

    fn lstm_direction_plain(&self, doc_emb: &Tensor, dir: &str) -> Result<Vec<Vec<f64>>> {
        let h = self.d / 2;
        let w_ih = &self.params.by_name(&format!("lstm.{dir}.w_ih"))?.value;
        let w_hh = &self.params.by_name(&format!("lstm.{dir}.w_hh"))?.value;
        let bias = &self.params.by_name(&format!("lstm.{dir}.bias"))?.value;
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut out = Vec::with_capacity(doc_emb.rows());
        for i in 0..doc_emb.rows() {
            let x = doc_emb.row_slice(i);
            let mut gates = bias.data().to_vec();
            for (kk, &xv) in x.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for j in 0..4 * h {
                    gates[j] += xv * w_ih.at(kk, j);
                }
            }
            for (kk, &hv) in h_prev.iter().enumerate() {
                if hv == 0.0 {
                    continue;
                }
                for j in 0..4 * h {
                    gates[j] += hv * w_hh.at(kk, j);
                }
            }
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let mut c = vec![0.0; h];
            let mut hh = vec![0.0; h];
            for j in 0..h {
                let i_g = sig(gates[j]);
                let f_g = sig(gates[h + j]);
                let g_g = gates[2 * h + j].tanh();
                let o_g = sig(gates[3 * h + j]);
                c[j] = f_g * c_prev[j] + i_g * g_g;
                hh[j] = o_g * c[j].tanh();
            }
            out.push(hh.clone());
            h_prev = hh;
            c_prev = c;
        }
        Ok(out)
    }

    /// Encode a document for decoding. Also the public surface for the
    /// `h_k = BiLSTM(a)` operation.
    pub fn encode_knowledge(&self, doc_emb: &Tensor) -> Result<Tensor> {
        if doc_emb.rows() == 0 {
            return Err(Error::invalid("empty knowledge document"));
        }
        let fwd = self.lstm_direction_plain(doc_emb, "fwd")?;
        let rev = {
            let mut flipped = Tensor::zeros(vec![doc_emb.rows(), doc_emb.cols()]);
            for i in 0..doc_emb.rows() {
                let src = doc_emb.row_slice(doc_emb.rows() - 1 - i);
                flipped.data_mut()[i * doc_emb.cols()..(i + 1) * doc_emb.cols()]
                    .copy_from_slice(src);
            }
            let mut b = self.lstm_direction_plain(&flipped, "bwd")?;
            b.reverse();
            b
        };
        let mut h_k = Tensor::zeros(vec![doc_emb.rows(), self.d]);
        let half = self.d / 2;
        for i in 0..doc_emb.rows() {
            h_k.data_mut()[i * self.d..i * self.d + half].copy_from_slice(&fwd[i]);
            h_k.data_mut()[i * self.d + half..(i + 1) * self.d].copy_from_slice(&rev[i]);
        }
        Ok(h_k)
    }

    /// Prepare per-example decode state: encoded document, projected keys,
    /// and the coverage vector threaded across steps.
    pub fn begin_decode(&self, base: &BaseLm, doc_ids: &[usize]) -> Result<KnowledgeDecodeState> {
        let doc_emb = embed_doc(base, doc_ids)?;
        let h_k = self.encode_knowledge(&doc_emb)?;
        let keys = matmul(&h_k, &self.params.by_name("attn.key_proj")?.value);
        Ok(KnowledgeDecodeState {
            doc_ids: doc_ids.to_vec(),
            h_k,
            keys,
            coverage: vec![0.0; doc_ids.len()],
        })
    }

    /// One decode step: the controlled distribution for the next token
    /// given the base state of the current position. Coverage accumulates
    /// into the state.
    pub fn step(
        &self,
        base: &BaseLm,
        state: &mut KnowledgeDecodeState,
        h_b_row: &[f64],
        force_alpha: Option<f64>,
        force_beta: Option<f64>,
    ) -> Result<KnowledgeStep> {
        let d = self.d;
        let k = state.doc_ids.len();
        let query_proj = &self.params.by_name("attn.query_proj")?.value;
        let attn_bias = &self.params.by_name("attn.bias")?.value;
        let score_vec = &self.params.by_name("attn.score")?.value;

        // Attention over document positions.
        let mut q = attn_bias.data().to_vec();
        for (kk, &hv) in h_b_row.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            for j in 0..d {
                q[j] += hv * query_proj.at(kk, j);
            }
        }
        let mut attn = vec![0.0; k];
        for (i, a) in attn.iter_mut().enumerate() {
            let mut e = 0.0;
            for j in 0..d {
                e += (state.keys.at(i, j) + q[j]).tanh() * score_vec.at(j, 0);
            }
            *a = e;
        }
        softmax_row(&mut attn);

        let mut context = vec![0.0; d];
        for (i, &w) in attn.iter().enumerate() {
            for j in 0..d {
                context[j] += w * state.h_k.at(i, j);
            }
        }

        let fuse_w = &self.params.by_name("fuse.weight")?.value;
        let fuse_b = &self.params.by_name("fuse.bias")?.value;
        let mut h_s = fuse_b.data().to_vec();
        for (kk, &cv) in context.iter().chain(h_b_row.iter()).enumerate() {
            if cv == 0.0 {
                continue;
            }
            for j in 0..d {
                h_s[j] += cv * fuse_w.at(kk, j);
            }
        }
        for v in h_s.iter_mut() {
            *v = v.tanh();
        }

        let alpha = match force_alpha {
            Some(v) => v,
            None => {
                let mix_w = &self.params.by_name("mix.weight")?.value;
                let mix_b = &self.params.by_name("mix.bias")?.value;
                let mut pre = mix_b.scalar_value();
                for (kk, &v) in h_s.iter().chain(h_b_row.iter()).enumerate() {
                    pre += v * mix_w.at(kk, 0);
                }
                1.0 / (1.0 + (-pre).exp())
            }
        };
        let beta = match force_beta {
            Some(v) => v,
            None => {
                let gate_w = &self.params.by_name("copy_gate.weight")?.value;
                let gate_b = &self.params.by_name("copy_gate.bias")?.value;
                let mut pre = gate_b.scalar_value();
                for (kk, &v) in context.iter().chain(h_b_row.iter()).enumerate() {
                    pre += v * gate_w.at(kk, 0);
                }
                1.0 / (1.0 + (-pre).exp())
            }
        };

        let fused: Vec<f64> = h_b_row
            .iter()
            .zip(h_s.iter())
            .map(|(&b, &s)| b * alpha + s * (1.0 - alpha))
            .collect();
        let p_gen = base.next_token_dist(&fused)?;
        let mut dist: Vec<f64> = p_gen.iter().map(|&p| p * beta).collect();
        for (i, &id) in state.doc_ids.iter().enumerate() {
            dist[id] += attn[i] * (1.0 - beta);
        }

        for (c, &a) in state.coverage.iter_mut().zip(attn.iter()) {
            *c += a;
        }
        Ok(KnowledgeStep { dist, alpha, beta, attention: attn })
    }
}

/// Document token embeddings through the frozen base embedding table
/// (the side network shares the base word embeddings).
pub fn embed_doc(base: &BaseLm, doc_ids: &[usize]) -> Result<Tensor> {
    if doc_ids.is_empty() {
        return Err(Error::invalid("empty knowledge document"));
    }
    let table = &base.params.by_name("embed.token")?.value;
    let d = table.cols();
    let mut doc_emb = Tensor::zeros(vec![doc_ids.len(), d]);
    for (i, &id) in doc_ids.iter().enumerate() {
        if id >= base.vocab_size {
            return Err(Error::invalid(format!("knowledge token id {id} out of vocabulary")));
        }
        doc_emb.data_mut()[i * d..(i + 1) * d].copy_from_slice(table.row_slice(id));
    }
    Ok(doc_emb)
}

/// `h = alpha * h_b + (1 - alpha) * h_s` with `alpha` a `[1,1]` or `[t,1]`
/// node. The per-step and global-scalar mixtures both reduce to this.
pub fn fuse_states(g: &mut Graph, h_b: NodeId, h_s: NodeId, alpha: NodeId) -> Result<NodeId> {
    let lhs = g.scale_rows(h_b, alpha)?;
    let neg = g.scale(alpha, -1.0)?;
    let one_minus = g.add_scalar(neg, 1.0)?;
    let rhs = g.scale_rows(h_s, one_minus)?;
    g.add(lhs, rhs)
}

/// Copy mixture: `beta * p_gen + (1 - beta) * scatter(attention)`, where the
/// scatter routes each document position's attention into its token id
/// (positions holding the same word sum; out-of-vocabulary words were
/// encoded as UNK, so their mass lands there).
pub fn mix_copy(
    g: &mut Graph,
    p_gen: NodeId,
    attention: NodeId,
    beta: NodeId,
    doc_ids: &[usize],
    vocab: usize,
) -> Result<NodeId> {
    let copy_dist = g.scatter_to_vocab(attention, doc_ids, vocab)?;
    let gen_part = g.scale_rows(p_gen, beta)?;
    let neg = g.scale(beta, -1.0)?;
    let one_minus = g.add_scalar(neg, 1.0)?;
    let copy_part = g.scale_rows(copy_dist, one_minus)?;
    g.add(gen_part, copy_part)
}

/// Coverage penalty `sum_t sum_i min(a_i^t, c_i^t)` with the coverage
/// vector `c^t` the sum of all earlier attention rows (zero before the
/// first step, so a single-step history contributes nothing).
pub fn coverage_loss_graph(g: &mut Graph, attention: &[NodeId]) -> Result<NodeId> {
    if attention.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let k = g.value(attention[0]).cols();
    let mut cov = g.constant(Tensor::zeros(vec![1, k]));
    let mut total = g.constant(Tensor::scalar(0.0));
    for &a_t in attention {
        let overlap = g.minimum(a_t, cov)?;
        let term = g.sum_all(overlap)?;
        total = g.add(total, term)?;
        cov = g.add(cov, a_t)?;
    }
    Ok(total)
}

#[derive(Debug)]
pub struct KnowledgeForward {
    pub final_probs: NodeId,
    pub alphas: Vec<NodeId>,
    pub betas: Vec<NodeId>,
    pub attention: Vec<NodeId>,
    pub coverage: NodeId,
}

/// Decode-time state threaded across steps (the paper's coverage state is
/// the cumulative attention vector).
#[derive(Clone, Debug)]
pub struct KnowledgeDecodeState {
    pub doc_ids: Vec<usize>,
    pub h_k: Tensor,
    pub keys: Tensor,
    pub coverage: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct KnowledgeStep {
    pub dist: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub attention: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn row(g: &mut Graph, v: Vec<f64>) -> NodeId {
        g.constant(Tensor::row(v))
    }

    #[test]
    fn fuse_endpoints_are_exact() {
        let mut g = Graph::new();
        let h_b = row(&mut g, vec![2.0, -3.0, 0.5]);
        let h_s = row(&mut g, vec![-1.0, 4.0, 2.5]);
        let one = g.constant(Tensor::scalar(1.0));
        let zero = g.constant(Tensor::scalar(0.0));
        let at_one = fuse_states(&mut g, h_b, h_s, one).unwrap();
        assert_eq!(g.value(at_one).data(), g.value(h_b).data());
        let at_zero = fuse_states(&mut g, h_b, h_s, zero).unwrap();
        assert_eq!(g.value(at_zero).data(), g.value(h_s).data());
    }

    #[test]
    fn fuse_midpoint() {
        let mut g = Graph::new();
        let h_b = row(&mut g, vec![2.0, 0.0]);
        let h_s = row(&mut g, vec![0.0, 2.0]);
        let half = g.constant(Tensor::scalar(0.5));
        let mid = fuse_states(&mut g, h_b, h_s, half).unwrap();
        assert_eq!(g.value(mid).data(), &[1.0, 1.0]);
    }

    #[test]
    fn copy_mix_hand_case() {
        // beta = 0.5, uniform p_gen over 4, document [a, b] with attention
        // [0.6, 0.4]: p(a) = 0.425, p(b) = 0.325, others 0.125.
        let mut g = Graph::new();
        let p_gen = row(&mut g, vec![0.25; 4]);
        let attn = row(&mut g, vec![0.6, 0.4]);
        let beta = g.constant(Tensor::scalar(0.5));
        let out = mix_copy(&mut g, p_gen, attn, beta, &[0, 1], 4).unwrap();
        let v = g.value(out).data();
        assert!((v[0] - 0.425).abs() < 1e-15);
        assert!((v[1] - 0.325).abs() < 1e-15);
        assert!((v[2] - 0.125).abs() < 1e-15);
        assert!((v[3] - 0.125).abs() < 1e-15);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn copy_mix_gate_endpoints() {
        let mut g = Graph::new();
        let p_gen = row(&mut g, vec![0.7, 0.1, 0.2]);
        let attn = row(&mut g, vec![1.0]);
        let one = g.constant(Tensor::scalar(1.0));
        let closed = mix_copy(&mut g, p_gen, attn, one, &[2], 3).unwrap();
        assert_eq!(g.value(closed).data(), &[0.7, 0.1, 0.2]);

        let zero = g.constant(Tensor::scalar(0.0));
        let open = mix_copy(&mut g, p_gen, attn, zero, &[2], 3).unwrap();
        assert_eq!(g.value(open).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn coverage_hand_cases() {
        // Single step: zero initial coverage means zero loss.
        let mut g = Graph::new();
        let a1 = row(&mut g, vec![0.3, 0.7]);
        let loss = coverage_loss_graph(&mut g, &[a1]).unwrap();
        assert_eq!(g.value(loss).scalar_value(), 0.0);

        // Identical halves twice: the second step overlaps fully.
        let mut g = Graph::new();
        let a1 = row(&mut g, vec![0.5, 0.5]);
        let a2 = row(&mut g, vec![0.5, 0.5]);
        let loss = coverage_loss_graph(&mut g, &[a1, a2]).unwrap();
        assert!((g.value(loss).scalar_value() - 1.0).abs() < 1e-15);

        // Alternating one-hot rows: only the third step overlaps.
        let mut g = Graph::new();
        let a1 = row(&mut g, vec![1.0, 0.0]);
        let a2 = row(&mut g, vec![0.0, 1.0]);
        let a3 = row(&mut g, vec![1.0, 0.0]);
        let loss = coverage_loss_graph(&mut g, &[a1, a2, a3]).unwrap();
        assert!((g.value(loss).scalar_value() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_lstm_params_give_zero_states() {
        let mut net = KnowledgeSideNet::new(8, 1);
        for name in ["lstm.fwd.w_ih", "lstm.fwd.w_hh", "lstm.bwd.w_ih", "lstm.bwd.w_hh"] {
            let idx = net.params.index_of(name).unwrap();
            net.params.get_mut(idx).value.data_mut().fill(0.0);
        }
        let doc = Tensor::new(vec![3, 8], (0..24).map(|i| i as f64 * 0.1).collect());
        let h_k = net.encode_knowledge(&doc).unwrap();
        assert!(h_k.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_document_shape_and_trivial_attention() {
        let net = KnowledgeSideNet::new(8, 2);
        let doc = Tensor::new(vec![1, 8], vec![0.2; 8]);
        let h_k = net.encode_knowledge(&doc).unwrap();
        assert_eq!(h_k.shape(), &[1, 8]);
    }

    #[test]
    fn reversed_input_with_swapped_directions_reverses_output() {
        let net = KnowledgeSideNet::new(8, 3);
        let mut swapped = net.clone();
        for suffix in ["w_ih", "w_hh", "bias"] {
            let f = net.params.by_name(&format!("lstm.fwd.{suffix}")).unwrap().value.clone();
            let b = net.params.by_name(&format!("lstm.bwd.{suffix}")).unwrap().value.clone();
            let fi = swapped.params.index_of(&format!("lstm.fwd.{suffix}")).unwrap();
            let bi = swapped.params.index_of(&format!("lstm.bwd.{suffix}")).unwrap();
            swapped.params.get_mut(fi).value = b;
            swapped.params.get_mut(bi).value = f;
        }
        let mut rng = Rng::new(5);
        let doc = Tensor::init_uniform(4, 8, 8, &mut rng);
        let mut reversed = Tensor::zeros(vec![4, 8]);
        for i in 0..4 {
            reversed.data_mut()[i * 8..(i + 1) * 8].copy_from_slice(doc.row_slice(3 - i));
        }
        let h = net.encode_knowledge(&doc).unwrap();
        let h_rev = swapped.encode_knowledge(&reversed).unwrap();
        let half = 4;
        for i in 0..4 {
            for j in 0..half {
                // forward states of the original match backward states of
                // the reversed run at the mirrored position, and vice versa
                assert!((h.at(i, j) - h_rev.at(3 - i, half + j)).abs() < 1e-12);
                assert!((h.at(i, half + j) - h_rev.at(3 - i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fusion_concat_order_is_context_then_base() {
        // Independent recomputation pins [c; h_b] for the fusion input and
        // [h_s; h_b] for the mixture input.
        let net = KnowledgeSideNet::new(4, 7);
        let mut g = Graph::new();
        let c_t = row(&mut g, vec![0.1, -0.2, 0.3, 0.4]);
        let hb = row(&mut g, vec![0.5, 0.6, -0.7, 0.8]);
        let fuse_w = g.param_by_name(&net.params, "fuse.weight").unwrap();
        let fuse_b = g.param_by_name(&net.params, "fuse.bias").unwrap();
        let cat = g.concat_cols(&[c_t, hb]).unwrap();
        let pre = g.matmul(cat, fuse_w).unwrap();
        let pre = g.add(pre, fuse_b).unwrap();
        let h_s = g.tanh(pre).unwrap();

        let w = &net.params.by_name("fuse.weight").unwrap().value;
        let b = &net.params.by_name("fuse.bias").unwrap().value;
        let cvals = [0.1, -0.2, 0.3, 0.4];
        let hvals = [0.5, 0.6, -0.7, 0.8];
        for j in 0..4 {
            let mut acc = b.data()[j];
            for (i, &cv) in cvals.iter().enumerate() {
                acc += cv * w.at(i, j);
            }
            for (i, &hv) in hvals.iter().enumerate() {
                acc += hv * w.at(4 + i, j);
            }
            assert!((g.value(h_s).data()[j] - acc.tanh()).abs() < 1e-15);
        }
    }
}
