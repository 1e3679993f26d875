//! The evaluation act classifier and controllability accuracy.
//!
//! The classifier here judges generated responses and must stay independent
//! of every generation model: it owns its own word embeddings and never
//! shares parameters with the base model or the control classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::AdamW;
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::side::label::argmax_tie_low;
use crate::tensor::{softmax_row, Tensor};
use crate::text::corpus::NUM_ACTS;

#[derive(Clone, Debug)]
pub struct EvalClassifier {
    pub emb_dim: usize,
    pub vocab_size: usize,
    pub params: ParamSet,
}

impl EvalClassifier {
    pub fn new(vocab_size: usize, emb_dim: usize, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "eval-clf-init");
        let mut p = ParamSet::new();
        p.add("emb.table", Tensor::init_uniform(vocab_size, emb_dim, emb_dim, &mut rng), true);
        p.add("head.weight", Tensor::init_uniform(emb_dim, NUM_ACTS, emb_dim, &mut rng), true);
        p.add("head.bias", Tensor::zeros(vec![1, NUM_ACTS]), true);
        EvalClassifier { emb_dim, vocab_size, params: p }
    }

    pub fn from_params(vocab_size: usize, emb_dim: usize, params: ParamSet) -> Self {
        EvalClassifier { emb_dim, vocab_size, params }
    }

    pub fn predict(&self, response: &[usize]) -> Result<Vec<f64>> {
        if response.is_empty() {
            return Err(Error::invalid("empty response"));
        }
        let table = &self.params.by_name("emb.table")?.value;
        let w = &self.params.by_name("head.weight")?.value;
        let b = &self.params.by_name("head.bias")?.value;
        let mut mean = vec![0.0; self.emb_dim];
        for &id in response {
            if id >= self.vocab_size {
                return Err(Error::invalid(format!("token id {id} out of vocabulary")));
            }
            for j in 0..self.emb_dim {
                mean[j] += table.at(id, j);
            }
        }
        for v in mean.iter_mut() {
            *v /= response.len() as f64;
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

    pub fn predict_act(&self, response: &[usize]) -> Result<usize> {
        Ok(argmax_tie_low(&self.predict(response)?))
    }

    fn loss_graph(&self, g: &mut Graph, response: &[usize], act: usize) -> Result<crate::graph::NodeId> {
        let table = g.param_by_name(&self.params, "emb.table")?;
        let emb = g.embed(table, response)?;
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
pub struct EvalClfConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub emb_dim: usize,
    /// Validation cadence in optimizer steps, scaled to the dataset.
    pub eval_interval: usize,
}

impl Default for EvalClfConfig {
    fn default() -> Self {
        EvalClfConfig { lr: 1e-4, batch_size: 16, epochs: 10, emb_dim: 64, eval_interval: 500 }
    }
}

fn split_accuracy(clf: &EvalClassifier, data: &[(Vec<usize>, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (resp, act) in data {
        if clf.predict_act(resp)? == *act {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn mean_loss(clf: &EvalClassifier, data: &[(Vec<usize>, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for (resp, act) in data {
        let mut g = Graph::new();
        let loss = clf.loss_graph(&mut g, resp, *act)?;
        total += g.value(loss).scalar_value();
    }
    Ok(total / data.len().max(1) as f64)
}

/// Train on (response, act) pairs with best-validation checkpointing.
/// Returns the classifier, its test accuracy, and the test confusion
/// matrix (rows true act, columns predicted act).
pub fn train_eval_classifier(
    train: &[(Vec<usize>, usize)],
    val: &[(Vec<usize>, usize)],
    test: &[(Vec<usize>, usize)],
    vocab_size: usize,
    cfg: &EvalClfConfig,
    seed: u64,
) -> Result<(EvalClassifier, f64, [[usize; NUM_ACTS]; NUM_ACTS])> {
    if train.is_empty() {
        return Err(Error::invalid("no training data"));
    }
    let mut present = [false; NUM_ACTS];
    for (_, act) in train {
        if *act >= NUM_ACTS {
            return Err(Error::invalid(format!("act {act} out of range")));
        }
        present[*act] = true;
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::invalid(format!(
            "act class {missing} absent from training data"
        )));
    }

    let mut clf = EvalClassifier::new(vocab_size, cfg.emb_dim, seed);
    let mut opt = AdamW::with_weight_decay(&clf.params, cfg.lr, 0.01);
    let mut rng = Rng::derive(seed, "eval-clf-train");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_val = f64::INFINITY;
    let mut best_params = clf.params.clone();
    let mut step = 0usize;
    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            for &i in chunk {
                let (resp, act) = &train[i];
                let mut g = Graph::new();
                let raw = clf.loss_graph(&mut g, resp, *act)?;
                let loss = g.scale(raw, 1.0 / chunk.len() as f64)?;
                g.backprop(loss)?;
                g.export_grads(&mut clf.params);
            }
            opt.step(&mut clf.params)?;
            step += 1;
            if step % cfg.eval_interval == 0 && !val.is_empty() {
                let vl = mean_loss(&clf, val)?;
                if vl < best_val {
                    best_val = vl;
                    best_params = clf.params.clone();
                }
            }
        }
    }
    let final_val = if val.is_empty() { f64::INFINITY } else { mean_loss(&clf, val)? };
    if final_val < best_val {
        best_params = clf.params.clone();
    }
    clf.params = best_params;

    let accuracy = split_accuracy(&clf, test)?;
    let mut confusion = [[0usize; NUM_ACTS]; NUM_ACTS];
    for (resp, act) in test {
        confusion[*act][clf.predict_act(resp)?] += 1;
    }
    Ok((clf, accuracy, confusion))
}

/// Fraction of responses whose predicted act matches the target act.
pub fn controllability_accuracy(
    responses: &[Vec<usize>],
    targets: &[usize],
    clf: &EvalClassifier,
) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::invalid("no responses to score"));
    }
    if responses.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} responses vs {} targets",
            responses.len(),
            targets.len()
        )));
    }
    let mut correct = 0usize;
    for (resp, &target) in responses.iter().zip(targets.iter()) {
        if resp.is_empty() {
            continue;
        }
        if clf.predict_act(resp)? == target {
            correct += 1;
        }
    }
    Ok(correct as f64 / responses.len() as f64)
}
