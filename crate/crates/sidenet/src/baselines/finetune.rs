//! Direct fine-tuning of the base model on the target dataset: every
//! parameter updated by teacher-forced NLL, best-validation checkpointing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::lm::model::BaseLm;
use crate::lm::train::sequence_loss;
use crate::optim::AdamW;
use crate::rng::Rng;
use crate::text::corpus::DialogueExample;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_interval: usize,
    pub max_steps: Option<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 2,
            epochs: 10,
            eval_interval: 1000,
            max_steps: None,
        }
    }
}

/// Fine-tune a copy of the base model. The original (typically the frozen
/// artifact every other method shares) is never touched; attempting to run
/// the loop over a frozen model is an error rather than a silent no-op.
pub fn finetune(
    base: &BaseLm,
    train: &[DialogueExample],
    val: &[DialogueExample],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(BaseLm, Vec<f64>, Vec<(usize, f64)>)> {
    let mut model = base.clone();
    for p in model.params.iter_mut() {
        p.trainable = true;
    }
    let mut model = BaseLm::from_params(model.config, model.vocab_size, model.params)?;
    finetune_in_place(&mut model, train, val, cfg, seed).map(|(t, v)| (model, t, v))
}

fn finetune_in_place(
    model: &mut BaseLm,
    train: &[DialogueExample],
    val: &[DialogueExample],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<(usize, f64)>)> {
    if model.frozen() || !model.params.iter().all(|p| p.trainable) {
        return Err(Error::Frozen(
            "attempt to fine-tune a frozen model in place; fine-tuning runs on an unfrozen copy"
                .into(),
        ));
    }
    assert!(!train.is_empty(), "no training examples");
    let mut opt = AdamW::with_weight_decay(&model.params, cfg.lr, cfg.weight_decay);
    let mut rng = Rng::derive(seed, "finetune");
    let mut order: Vec<usize> = (0..train.len()).collect();
    rng.shuffle(&mut order);
    let mut cursor = 0usize;

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size).max(1);
    let mut total_steps = cfg.epochs * steps_per_epoch;
    if let Some(cap) = cfg.max_steps {
        total_steps = total_steps.min(cap);
    }

    let mut trace = Vec::with_capacity(total_steps);
    let mut val_trace = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();

    for step in 1..=total_steps {
        let mut batch_loss = 0.0;
        let mut batch_tokens = 0usize;
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let ex = &train[order[cursor]];
            cursor += 1;
            let mut g = Graph::new();
            let (raw, n_tokens) = sequence_loss(&mut g, model, ex)?;
            let loss = g.scale(raw, 1.0 / (n_tokens as f64 * cfg.batch_size as f64))?;
            g.backprop(loss)?;
            g.export_grads(&mut model.params);
            batch_loss += g.value(raw).scalar_value();
            batch_tokens += n_tokens;
        }
        opt.step(&mut model.params)?;
        trace.push(batch_loss / batch_tokens.max(1) as f64);

        if step % cfg.eval_interval == 0 || step == total_steps {
            let val_loss = if val.is_empty() {
                *trace.last().unwrap()
            } else {
                crate::lm::train::mean_nll(model, val)?
            };
            val_trace.push((step, val_loss));
            if val_loss < best_val {
                best_val = val_loss;
                best_params = model.params.clone();
            }
        }
    }
    model.params = best_params;
    Ok((trace, val_trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint;
    use crate::lm::model::LmConfig;
    use crate::lm::train::{mean_nll, train_base_lm, TrainLmConfig};
    use crate::text::corpus::{corpus_examples, Task};
    use crate::text::synth::generate_synthetic_corpus;
    use crate::text::vocab::build_vocab;

    fn setup() -> (BaseLm, Vec<DialogueExample>) {
        let corpus = generate_synthetic_corpus(Task::Label, 8, 2);
        let vocab = build_vocab(corpus.all_text(), 1).unwrap();
        let examples = corpus_examples(&corpus, &vocab, Task::Label, 5).unwrap();
        let cfg = TrainLmConfig {
            model: LmConfig { d: 16, layers: 1, heads: 2, lmax: 64 },
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 2,
            steps: 5,
        };
        let (mut lm, _) = train_base_lm(&examples, vocab.size(), &cfg, 1).unwrap();
        lm.freeze();
        (lm, examples)
    }

    #[test]
    fn zero_epochs_returns_input_checkpoint() {
        let (lm, examples) = setup();
        let cfg = FinetuneConfig { epochs: 0, ..Default::default() };
        let (ft, trace, _) = finetune(&lm, &examples, &[], &cfg, 3).unwrap();
        assert!(trace.is_empty());
        // Same values; only trainability flags differ on the copy.
        for (a, b) in lm.params.iter().zip(ft.params.iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn finetuning_lowers_nll_and_never_touches_original() {
        let (lm, examples) = setup();
        let before = checkpoint::to_string(&lm.params);
        let baseline = mean_nll(&lm, &examples).unwrap();
        let cfg = FinetuneConfig {
            lr: 1e-3,
            eval_interval: 20,
            max_steps: Some(40),
            ..Default::default()
        };
        let (ft, _, _) = finetune(&lm, &examples, &examples, &cfg, 3).unwrap();
        let after = mean_nll(&ft, &examples).unwrap();
        assert!(after < baseline, "nll {baseline} -> {after}");
        assert_eq!(checkpoint::to_string(&lm.params), before);
    }

    #[test]
    fn frozen_in_place_is_rejected() {
        let (mut lm, examples) = setup();
        lm.freeze();
        let err = finetune_in_place(&mut lm, &examples, &[], &FinetuneConfig::default(), 1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("frozen"), "{err}");
    }

    #[test]
    fn deterministic_under_seed() {
        let (lm, examples) = setup();
        let cfg = FinetuneConfig { max_steps: Some(10), eval_interval: 5, ..Default::default() };
        let (_, t1, _) = finetune(&lm, &examples, &examples, &cfg, 9).unwrap();
        let (_, t2, _) = finetune(&lm, &examples, &examples, &cfg, 9).unwrap();
        assert_eq!(t1.last().unwrap().to_bits(), t2.last().unwrap().to_bits());
    }
}
