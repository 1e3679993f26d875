//! The weighted-decoding baseline: a future discriminator re-scores the
//! base model's top candidates at every step. With weight 0 it reduces to
//! plain top-k sampling, bit for bit.

use sidenet::baselines::discriminator::{train_future_discriminator, DiscTrainConfig};
use sidenet::baselines::fudge::{fudge_decode, ActScorer, FudgeConfig};
use sidenet::lm::model::LmConfig;
use sidenet::lm::sample::{generate_base, GenerationConfig};
use sidenet::lm::train::{train_base_lm, TrainLmConfig};
use sidenet::rng::Rng;
use sidenet::text::corpus::{corpus_examples, Task};
use sidenet::text::synth::{generate_synthetic_corpus, ACT_NAMES};
use sidenet::text::vocab::build_vocab;

fn main() -> sidenet::Result<()> {
    let corpus = generate_synthetic_corpus(Task::Label, 300, 5);
    let vocab = build_vocab(corpus.all_text(), 1)?;
    let examples = corpus_examples(&corpus, &vocab, Task::Label, 5)?;
    let (train, held) = examples.split_at(examples.len() * 9 / 10);

    let lm_cfg = TrainLmConfig {
        model: LmConfig { d: 32, layers: 2, heads: 2, lmax: 96 },
        steps: 300,
        ..Default::default()
    };
    let (mut base, _) = train_base_lm(train, vocab.size(), &lm_cfg, 5)?;
    base.freeze();

    let disc_cfg = DiscTrainConfig { lr: 1e-3, epochs: 2, ..Default::default() };
    let (disc, acc) = train_future_discriminator(train, held, vocab.size(), &disc_cfg, 6)?;
    println!("future discriminator held-out accuracy: {acc:.3}");

    let context = vec![vocab.encode("the meadow is bright .")];
    let gen = GenerationConfig { top_k: 10, max_len: 14, seed: 0 };
    let fudge = FudgeConfig::for_task(Task::Label);
    for target in 0..4 {
        let scorer = ActScorer { disc: &disc, target };
        let mut rng = Rng::derive(47, "decode");
        let tokens = fudge_decode(&base, &scorer, &context, &fudge, &gen, &mut rng)?;
        println!("  steer to {:>10}: {}", ACT_NAMES[target], vocab.decode(&tokens));
    }

    // weight = 0 reproduces plain top-k decoding exactly.
    let zero = FudgeConfig { weight: 0.0, ..fudge };
    let scorer = ActScorer { disc: &disc, target: 0 };
    let mut r1 = Rng::derive(48, "decode");
    let mut r2 = Rng::derive(48, "decode");
    let a = fudge_decode(&base, &scorer, &context, &zero, &gen, &mut r1)?;
    let b = generate_base(&base, &context, &gen, &mut r2)?;
    println!("weight 0 equals plain top-k: {}", a == b);
    Ok(())
}
