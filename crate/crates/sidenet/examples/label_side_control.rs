//! Semantic-label control end to end: train a base model, freeze it, train
//! the attribute classifier on its representations, train a side network
//! with the classifier-guided control loss, and steer one context through
//! all four dialogue acts.

use sidenet::lm::model::LmConfig;
use sidenet::lm::sample::GenerationConfig;
use sidenet::lm::train::{train_base_lm, TrainLmConfig};
use sidenet::rng::Rng;
use sidenet::side::train::{
    generate_controlled, pretrain_classifier, train_side, ClassifierTrainConfig, DecodeOverrides,
    SideTrainConfig,
};
use sidenet::text::corpus::{corpus_examples, ControlAttribute, Task};
use sidenet::text::synth::{generate_synthetic_corpus, ACT_NAMES};
use sidenet::text::vocab::build_vocab;

fn main() -> sidenet::Result<()> {
    let corpus = generate_synthetic_corpus(Task::Label, 400, 11);
    let vocab = build_vocab(corpus.all_text(), 1)?;
    let examples = corpus_examples(&corpus, &vocab, Task::Label, 5)?;
    let (train, valid) = examples.split_at(examples.len() * 9 / 10);

    let lm_cfg = TrainLmConfig {
        model: LmConfig { d: 32, layers: 2, heads: 2, lmax: 96 },
        steps: 300,
        ..Default::default()
    };
    let (mut base, _) = train_base_lm(train, vocab.size(), &lm_cfg, 11)?;
    base.freeze();
    println!("base trained and frozen");

    let clf = pretrain_classifier(&base, train, &ClassifierTrainConfig::default(), 12)?;
    println!("attribute classifier trained on frozen-base states and frozen");

    let mut side_cfg = SideTrainConfig::for_task(Task::Label, 1e4);
    side_cfg.max_steps = Some(1200);
    side_cfg.eval_interval = 400;
    let trained = train_side(&base, Task::Label, train, valid, Some(&clf), &side_cfg, 13)?;
    println!(
        "side network trained: {} steps, best validation objective {:.3}",
        trained.train_trace.len(),
        trained.best_val_loss
    );

    let context = vec![vocab.encode("my garden was calm yesterday .")];
    let gen = GenerationConfig { top_k: 10, max_len: 14, seed: 0 };
    for act in 0..4 {
        let attribute = ControlAttribute::SemanticLabel { act };
        let mut rng = Rng::derive(29, "steer");
        let (tokens, _) = generate_controlled(
            &base,
            &trained.net,
            &context,
            &attribute,
            &gen,
            DecodeOverrides::default(),
            &mut rng,
        )?;
        println!("  {:>10}: {}", ACT_NAMES[act], vocab.decode(&tokens));
    }
    Ok(())
}
