//! Attribute models for the decode-time baselines.
//!
//! The label task uses a future discriminator: a mean-of-embeddings
//! classifier scoring p(act | response prefix), trained on every prefix of
//! every response so it can judge partial generations. The knowledge task
//! uses a non-parametric bag-of-words attribute over the document's content
//! words.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::AdamW;
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::side::label::argmax_tie_low;
use crate::tensor::{softmax_row, Tensor};
use crate::text::corpus::{DialogueExample, NUM_ACTS};

#[derive(Clone, Debug)]
pub struct FutureDiscriminator {
    pub emb_dim: usize,
    pub vocab_size: usize,
    pub params: ParamSet,
}

impl FutureDiscriminator {
    pub fn new(vocab_size: usize, emb_dim: usize, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "disc-init");
        let mut p = ParamSet::new();
        p.add("emb.table", Tensor::init_uniform(vocab_size, emb_dim, emb_dim, &mut rng), true);
        p.add("head.weight", Tensor::init_uniform(emb_dim, NUM_ACTS, emb_dim, &mut rng), true);
        p.add("head.bias", Tensor::zeros(vec![1, NUM_ACTS]), true);
        FutureDiscriminator { emb_dim, vocab_size, params: p }
    }

    pub fn from_params(vocab_size: usize, emb_dim: usize, params: ParamSet) -> Self {
        FutureDiscriminator { emb_dim, vocab_size, params }
    }

    /// p(act | prefix) over the four acts.
    pub fn predict(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::invalid("empty prefix"));
        }
        let table = &self.params.by_name("emb.table")?.value;
        let w = &self.params.by_name("head.weight")?.value;
        let b = &self.params.by_name("head.bias")?.value;
        let mut mean = vec![0.0; self.emb_dim];
        for &id in prefix {
            if id >= self.vocab_size {
                return Err(Error::invalid(format!("token id {id} out of vocabulary")));
            }
            for j in 0..self.emb_dim {
                mean[j] += table.at(id, j);
            }
        }
        for v in mean.iter_mut() {
            *v /= prefix.len() as f64;
        }
        let mut logits = b.data().to_vec();
        for (c, l) in logits.iter_mut().enumerate() {
            for (j, &m) in mean.iter().enumerate() {
                *l += m * w.at(j, c);
            }
        }
        softmax_row(&mut logits);
        Ok(logits)
    }

    fn loss_graph(&self, g: &mut Graph, prefix: &[usize], act: usize) -> Result<crate::graph::NodeId> {
        let table = g.param_by_name(&self.params, "emb.table")?;
        let emb = g.embed(table, prefix)?;
        let mean = g.mean_rows(emb)?;
        let w = g.param_by_name(&self.params, "head.weight")?;
        let b = g.param_by_name(&self.params, "head.bias")?;
        let logits = g.matmul(mean, w)?;
        let logits = g.add(logits, b)?;
        let probs = g.softmax(logits, 1)?;
        g.nll_gather(probs, &[act])
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DiscTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub emb_dim: usize,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        DiscTrainConfig { lr: 2e-5, batch_size: 16, epochs: 10, emb_dim: 64 }
    }
}

/// Train on every prefix `y_{1:t}` of every response (future-attribute
/// prediction). Returns the discriminator plus its held-out full-response
/// accuracy.
pub fn train_future_discriminator(
    train: &[DialogueExample],
    held_out: &[DialogueExample],
    vocab_size: usize,
    cfg: &DiscTrainConfig,
    seed: u64,
) -> Result<(FutureDiscriminator, f64)> {
    let mut prefixes: Vec<(Vec<usize>, usize)> = Vec::new();
    for ex in train {
        let act = ex
            .attribute
            .act()
            .ok_or_else(|| Error::invalid("dataset lacks act labels"))?;
        for t in 1..=ex.response.len() {
            prefixes.push((ex.response[..t].to_vec(), act));
        }
    }
    if prefixes.is_empty() {
        return Err(Error::invalid("no training prefixes"));
    }
    let mut disc = FutureDiscriminator::new(vocab_size, cfg.emb_dim, seed);
    let mut opt = AdamW::with_weight_decay(&disc.params, cfg.lr, 0.01);
    let mut rng = Rng::derive(seed, "disc-train");
    let mut order: Vec<usize> = (0..prefixes.len()).collect();
    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            for &i in chunk {
                let (prefix, act) = &prefixes[i];
                let mut g = Graph::new();
                let raw = disc.loss_graph(&mut g, prefix, *act)?;
                let loss = g.scale(raw, 1.0 / chunk.len() as f64)?;
                g.backprop(loss)?;
                g.export_grads(&mut disc.params);
            }
            opt.step(&mut disc.params)?;
        }
    }
    let acc = discriminator_accuracy(&disc, held_out, None)?;
    Ok((disc, acc))
}

/// Accuracy over responses truncated to `prefix_len` tokens (None = full).
pub fn discriminator_accuracy(
    disc: &FutureDiscriminator,
    examples: &[DialogueExample],
    prefix_len: Option<usize>,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for ex in examples {
        let act = ex
            .attribute
            .act()
            .ok_or_else(|| Error::invalid("dataset lacks act labels"))?;
        let end = prefix_len.unwrap_or(ex.response.len()).min(ex.response.len()).max(1);
        let p = disc.predict(&ex.response[..end])?;
        if argmax_tie_low(&p) == act {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Content-word ids of a knowledge document. Falls back to the full token
/// set when stopword removal would empty it.
#[derive(Clone, Debug)]
pub struct BagOfWordsAttribute {
    pub ids: BTreeSet<usize>,
}

impl BagOfWordsAttribute {
    pub fn from_doc(doc_ids: &[usize], stopword_ids: &BTreeSet<usize>) -> Result<Self> {
        if doc_ids.is_empty() {
            return Err(Error::invalid("empty knowledge document"));
        }
        let filtered: BTreeSet<usize> =
            doc_ids.iter().copied().filter(|id| !stopword_ids.contains(id)).collect();
        let ids = if filtered.is_empty() {
            doc_ids.iter().copied().collect()
        } else {
            filtered
        };
        Ok(BagOfWordsAttribute { ids })
    }

    /// Laplace-smoothed fraction of prefix tokens that are bag words; in
    /// (0, 1], monotonically rewarding bag-word continuations.
    pub fn score(&self, prefix: &[usize]) -> f64 {
        let hits = prefix.iter().filter(|id| self.ids.contains(id)).count();
        (1.0 + hits as f64) / (1.0 + prefix.len() as f64)
    }
}

/// PPLM's bag-of-words objective: `-log sum_{w in bag} dist(w)`, clamped.
pub fn bow_attribute_loss(dist: &[f64], bag: &BagOfWordsAttribute) -> f64 {
    let mass: f64 = bag.ids.iter().filter(|&&id| id < dist.len()).map(|&id| dist[id]).sum();
    -mass.max(1e-12).ln()
}
