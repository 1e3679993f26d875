//! Base language-model training: next-token cross-entropy over packed
//! sequences, AdamW, gradient accumulation across a small batch.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::Graph;
use crate::lm::model::{lm_targets, pack_sequence, BaseLm, LmConfig};
use crate::optim::AdamW;
use crate::rng::Rng;
use crate::text::corpus::DialogueExample;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainLmConfig {
    pub model: LmConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
}

impl Default for TrainLmConfig {
    fn default() -> Self {
        TrainLmConfig {
            model: LmConfig::default(),
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 4,
            steps: 2000,
        }
    }
}

/// Mean next-token NLL of one packed example, built in `g`. Gradient flows
/// into whatever parameters the model leases into the graph.
pub(crate) fn sequence_loss(
    g: &mut Graph,
    lm: &BaseLm,
    example: &DialogueExample,
) -> Result<(crate::graph::NodeId, usize)> {
    let (tokens, _) = pack_sequence(&example.context, &example.response, lm.config.lmax, 1)?;
    let targets = lm_targets(&tokens);
    let states = lm.forward_states_graph(g, &tokens, None)?;
    let probs = lm.dist_graph(g, states)?;
    let nll = g.nll_gather(probs, &targets)?;
    Ok((nll, targets.len()))
}

/// Mean per-token NLL over a set of examples, no gradients.
pub fn mean_nll(lm: &BaseLm, examples: &[DialogueExample]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let mut g = Graph::new();
        let (loss, n) = sequence_loss(&mut g, lm, ex)?;
        total += g.value(loss).scalar_value();
        count += n;
    }
    Ok(total / count.max(1) as f64)
}

/// Train a fresh base model for `cfg.steps` optimizer steps over shuffled
/// examples. Deterministic given the seed. Returns the unfrozen model and
/// the per-step mean-NLL trace.
pub fn train_base_lm(
    examples: &[DialogueExample],
    vocab_size: usize,
    cfg: &TrainLmConfig,
    seed: u64,
) -> Result<(BaseLm, Vec<f64>)> {
    let mut lm = BaseLm::new(cfg.model, vocab_size, seed);
    let trace = train_lm_in_place(&mut lm, examples, cfg, seed)?;
    Ok((lm, trace))
}

/// The shared loop, also used by the fine-tuning baseline on a copied model.
pub fn train_lm_in_place(
    lm: &mut BaseLm,
    examples: &[DialogueExample],
    cfg: &TrainLmConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    assert!(!examples.is_empty(), "no training examples");
    let mut rng = Rng::derive(seed, "base-train");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    rng.shuffle(&mut order);
    let mut cursor = 0usize;

    let mut opt = AdamW::with_weight_decay(&lm.params, cfg.lr, cfg.weight_decay);
    let mut trace = Vec::with_capacity(cfg.steps);
    for _step in 0..cfg.steps {
        let mut step_loss = 0.0;
        let mut step_tokens = 0usize;
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let ex = &examples[order[cursor]];
            cursor += 1;
            let mut g = Graph::new();
            let (raw, n_tokens) = sequence_loss(&mut g, lm, ex)?;
            // Per-example mean NLL, averaged over the batch.
            let loss = g.scale(raw, 1.0 / (n_tokens as f64 * cfg.batch_size as f64))?;
            g.backprop(loss)?;
            g.export_grads(&mut lm.params);
            step_loss += g.value(raw).scalar_value();
            step_tokens += n_tokens;
        }
        opt.step(&mut lm.params)?;
        trace.push(step_loss / step_tokens.max(1) as f64);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::corpus::ControlAttribute;

    fn toy_examples(vocab: usize) -> Vec<DialogueExample> {
        vec![DialogueExample {
            context: vec![vec![5, 6, 7, 8]],
            response: vec![9, 10, 11, 12, 13, 9, 10],
            attribute: ControlAttribute::SemanticLabel { act: 0 },
        }]
        .into_iter()
        .map(|mut e| {
            e.response.iter_mut().for_each(|t| *t %= vocab);
            e
        })
        .collect()
    }

    #[test]
    fn untrained_per_token_nll_is_near_ln_vocab() {
        // The uniform fan-in init leaves logits with variance ~1/3, which
        // costs a constant ~1/6 nat over ln|V|; at corpus-scale
        // vocabularies that is inside 5%.
        let vocab = 200usize;
        let mut examples = toy_examples(vocab);
        examples[0].response = vec![23, 154, 87, 9, 190, 66, 101, 45, 132, 7];
        let lm = BaseLm::new(LmConfig { d: 32, layers: 2, heads: 2, lmax: 32 }, vocab, 9);
        let nll = mean_nll(&lm, &examples).unwrap();
        let target = (vocab as f64).ln();
        assert!(
            (nll - target).abs() / target < 0.05,
            "nll {nll} vs ln|V| {target}"
        );
    }

    #[test]
    fn memorizes_single_sequence() {
        let vocab = 20usize;
        let examples = toy_examples(vocab);
        let cfg = TrainLmConfig {
            model: LmConfig { d: 32, layers: 1, heads: 2, lmax: 32 },
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 1,
            steps: 500,
        };
        let (_, trace) = train_base_lm(&examples, vocab, &cfg, 3).unwrap();
        let initial = trace[0];
        let last = *trace.last().unwrap();
        assert!(
            last < 0.1 * initial,
            "loss went {initial} -> {last}, wanted < 10% of initial"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let vocab = 20usize;
        let examples = toy_examples(vocab);
        let cfg = TrainLmConfig {
            model: LmConfig { d: 16, layers: 1, heads: 2, lmax: 32 },
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 2,
            steps: 25,
        };
        let (_, t1) = train_base_lm(&examples, vocab, &cfg, 7).unwrap();
        let (_, t2) = train_base_lm(&examples, vocab, &cfg, 7).unwrap();
        assert_eq!(t1.last().unwrap().to_bits(), t2.last().unwrap().to_bits());
    }
}
