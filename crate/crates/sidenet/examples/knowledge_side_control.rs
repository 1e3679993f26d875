//! Knowledge-document control: the side network encodes a persona with a
//! BiLSTM, cross-attends it per decoding step, and mixes the head
//! distribution with the attention copy distribution. Swapping the document
//! changes what gets copied; the per-step mixture and copy gates are shown.

use sidenet::lm::model::LmConfig;
use sidenet::lm::sample::GenerationConfig;
use sidenet::lm::train::{train_base_lm, TrainLmConfig};
use sidenet::rng::Rng;
use sidenet::side::train::{generate_controlled, train_side, DecodeOverrides, SideTrainConfig};
use sidenet::text::corpus::{corpus_examples, encode_knowledge_doc, ControlAttribute, Task};
use sidenet::text::synth::generate_synthetic_corpus;
use sidenet::text::vocab::build_vocab;

fn main() -> sidenet::Result<()> {
    let corpus = generate_synthetic_corpus(Task::Knowledge, 300, 21);
    let vocab = build_vocab(corpus.all_text(), 1)?;
    let examples = corpus_examples(&corpus, &vocab, Task::Knowledge, 4)?;
    let (train, valid) = examples.split_at(examples.len() * 9 / 10);

    let lm_cfg = TrainLmConfig {
        model: LmConfig { d: 32, layers: 2, heads: 2, lmax: 96 },
        steps: 300,
        ..Default::default()
    };
    let (mut base, _) = train_base_lm(train, vocab.size(), &lm_cfg, 21)?;
    base.freeze();

    let mut side_cfg = SideTrainConfig::for_task(Task::Knowledge, 1e-5);
    side_cfg.max_steps = Some(1200);
    side_cfg.eval_interval = 400;
    let trained = train_side(&base, Task::Knowledge, train, valid, None, &side_cfg, 22)?;
    println!("knowledge side network trained ({} steps)", trained.train_trace.len());

    let context = vec![vocab.encode("well i really like hiking very much .")];
    let gen = GenerationConfig { top_k: 10, max_len: 16, seed: 0 };
    for facts in [
        vec!["i love salmon and garlic and onion".to_string()],
        vec!["my hobbies are chess and rowing and archery and pottery".to_string()],
    ] {
        let attribute = ControlAttribute::KnowledgeDoc {
            tokens: encode_knowledge_doc(&facts, &vocab),
        };
        let mut rng = Rng::derive(31, "steer");
        let (tokens, traces) = generate_controlled(
            &base,
            &trained.net,
            &context,
            &attribute,
            &gen,
            DecodeOverrides::default(),
            &mut rng,
        )?;
        println!("document: {}", facts.join(" | "));
        println!("  response: {}", vocab.decode(&tokens));
        let alpha_mean =
            traces.iter().map(|t| t.alpha).sum::<f64>() / traces.len().max(1) as f64;
        let beta_mean = traces.iter().filter_map(|t| t.beta).sum::<f64>()
            / traces.len().max(1) as f64;
        println!("  mean alpha {alpha_mean:.3}, mean copy gate beta {beta_mean:.3}");
    }
    Ok(())
}
