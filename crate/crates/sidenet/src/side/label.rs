//! Semantic-label control.
//!
//! The side network is a feed-forward fusion of a learned label embedding
//! with the base state; the mixture coefficient is one global trainable
//! scalar squashed through a sigmoid. The control loss feeds the mean side
//! representation through an attribute classifier that was trained on base
//! representations and then frozen: optimizing it pushes the side
//! representations toward the target act while the classifier itself never
//! moves.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::lm::model::BaseLm;
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::tensor::{softmax_row, Tensor};
use crate::text::corpus::NUM_ACTS;

#[derive(Clone, Debug)]
pub struct LabelSideNet {
    pub d: usize,
    pub params: ParamSet,
}

impl LabelSideNet {
    pub fn new(d: usize, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "label-side-init");
        let mut p = ParamSet::new();
        p.add("label.embed", Tensor::init_uniform(NUM_ACTS, d, d, &mut rng), true);
        p.add("fuse.weight", Tensor::init_uniform(2 * d, d, 2 * d, &mut rng), true);
        p.add("fuse.bias", Tensor::zeros(vec![1, d]), true);
        // sigmoid(0) starts the global mixture at 0.5.
        p.add("mix.logit", Tensor::zeros(vec![1, 1]), true);
        LabelSideNet { d, params: p }
    }

    pub fn from_params(d: usize, params: ParamSet) -> Self {
        LabelSideNet { d, params }
    }

    pub fn check_act(act: usize) -> Result<()> {
        if act >= NUM_ACTS {
            return Err(Error::invalid(format!("act {act} out of range 0..{NUM_ACTS}")));
        }
        Ok(())
    }

    /// Side representations for every response position: `[T, d]`.
    pub fn side_reps_graph(&self, g: &mut Graph, act: usize, h_b: NodeId) -> Result<NodeId> {
        Self::check_act(act)?;
        let t_len = g.value(h_b).rows();
        let table = g.param_by_name(&self.params, "label.embed")?;
        let emb = g.embed(table, &[act])?;
        let rep = g.repeat_rows(emb, t_len)?;
        let cat = g.concat_cols(&[rep, h_b])?;
        let w = g.param_by_name(&self.params, "fuse.weight")?;
        let b = g.param_by_name(&self.params, "fuse.bias")?;
        let pre = g.matmul(cat, w)?;
        let pre = g.add(pre, b)?;
        g.tanh(pre)
    }

    /// Teacher-forced head distributions `[T, |V|]` plus the pieces the
    /// control loss needs.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        act: usize,
        h_b: &Tensor,
        w_vocab: &Tensor,
        force_alpha: Option<f64>,
    ) -> Result<LabelForward> {
        let h_b_node = g.constant(h_b.clone());
        let h_s = self.side_reps_graph(g, act, h_b_node)?;
        let alpha = match force_alpha {
            Some(v) => g.constant(Tensor::scalar(v)),
            None => {
                let logit = g.param_by_name(&self.params, "mix.logit")?;
                g.sigmoid(logit)?
            }
        };
        let fused = super::knowledge::fuse_states(g, h_b_node, h_s, alpha)?;
        let wv = g.constant(w_vocab.clone());
        let logits = g.matmul(fused, wv)?;
        let probs = g.softmax(logits, 1)?;
        Ok(LabelForward { probs, side_reps: h_s, alpha })
    }

    pub fn alpha(&self) -> f64 {
        let logit = self.params.by_name("mix.logit").expect("mix.logit").value.scalar_value();
        1.0 / (1.0 + (-logit).exp())
    }

    /// One plain decode step given the base state of the current position.
    pub fn step(
        &self,
        base: &BaseLm,
        act: usize,
        h_b_row: &[f64],
        force_alpha: Option<f64>,
    ) -> Result<LabelStep> {
        Self::check_act(act)?;
        let d = self.d;
        let table = &self.params.by_name("label.embed")?.value;
        let w = &self.params.by_name("fuse.weight")?.value;
        let b = &self.params.by_name("fuse.bias")?.value;
        let mut h_s = b.data().to_vec();
        for (kk, &v) in table.row_slice(act).iter().chain(h_b_row.iter()).enumerate() {
            if v == 0.0 {
                continue;
            }
            for j in 0..d {
                h_s[j] += v * w.at(kk, j);
            }
        }
        for v in h_s.iter_mut() {
            *v = v.tanh();
        }
        let alpha = force_alpha.unwrap_or_else(|| self.alpha());
        let fused: Vec<f64> = h_b_row
            .iter()
            .zip(h_s.iter())
            .map(|(&hb, &hs)| hb * alpha + hs * (1.0 - alpha))
            .collect();
        let dist = base.next_token_dist(&fused)?;
        Ok(LabelStep { dist, alpha })
    }
}

#[derive(Debug)]
pub struct LabelForward {
    pub probs: NodeId,
    pub side_reps: NodeId,
    pub alpha: NodeId,
}

#[derive(Clone, Debug)]
pub struct LabelStep {
    pub dist: Vec<f64>,
    pub alpha: f64,
}

/// Attribute classifier `p(a | h_{1:T}) = softmax(W_clf . mean_t h_t)`,
/// trained once on base representations and frozen before side training.
#[derive(Clone, Debug)]
pub struct AttributeClassifier {
    pub d: usize,
    pub params: ParamSet,
    frozen: bool,
}

impl AttributeClassifier {
    pub fn new(d: usize, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "clf-init");
        let mut p = ParamSet::new();
        p.add("clf.weight", Tensor::init_uniform(d, NUM_ACTS, d, &mut rng), true);
        AttributeClassifier { d, params: p, frozen: false }
    }

    pub fn from_params(d: usize, params: ParamSet) -> Self {
        let frozen = params.all_frozen();
        AttributeClassifier { d, params, frozen }
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.params.freeze_all();
        self.frozen = true;
    }

    pub fn weight(&self) -> &Tensor {
        &self.params.by_name("clf.weight").expect("clf.weight").value
    }

    /// Class distribution and NLL of the target act, differentiable through
    /// `reps`; the classifier weight enters as a constant so its gradient is
    /// identically zero during side training.
    pub fn control_loss_graph(
        &self,
        g: &mut Graph,
        reps: NodeId,
        target_act: usize,
    ) -> Result<(NodeId, NodeId)> {
        LabelSideNet::check_act(target_act)?;
        if !self.frozen {
            return Err(Error::Frozen(
                "attribute classifier must be frozen before side training".into(),
            ));
        }
        let mean = g.mean_rows(reps)?;
        let w = g.constant(self.weight().clone());
        let logits = g.matmul(mean, w)?;
        let probs = g.softmax(logits, 1)?;
        let loss = g.nll_gather(probs, &[target_act])?;
        Ok((probs, loss))
    }

    /// Same loss but with the classifier weight trainable; used only to
    /// pretrain the classifier itself on base representations.
    pub fn train_loss_graph(
        &self,
        g: &mut Graph,
        mean_rep: &[f64],
        target_act: usize,
    ) -> Result<NodeId> {
        let x = g.constant(Tensor::row(mean_rep.to_vec()));
        let w = g.param_by_name(&self.params, "clf.weight")?;
        let logits = g.matmul(x, w)?;
        let probs = g.softmax(logits, 1)?;
        g.nll_gather(probs, &[target_act])
    }

    pub fn predict(&self, mean_rep: &[f64]) -> Vec<f64> {
        let w = self.weight();
        let mut logits = vec![0.0; NUM_ACTS];
        for (c, l) in logits.iter_mut().enumerate() {
            for (j, &v) in mean_rep.iter().enumerate() {
                *l += v * w.at(j, c);
            }
        }
        softmax_row(&mut logits);
        logits
    }

    pub fn predict_act(&self, mean_rep: &[f64]) -> usize {
        let p = self.predict(mean_rep);
        argmax_tie_low(&p)
    }
}

/// Argmax with ties resolved toward the lower index.
pub fn argmax_tie_low(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
