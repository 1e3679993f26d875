//! Train a small base language model from scratch on a synthetic dialogue
//! corpus, then freeze it and sample a few responses.

use sidenet::lm::model::LmConfig;
use sidenet::lm::sample::{generate_base, GenerationConfig};
use sidenet::lm::train::{train_base_lm, TrainLmConfig};
use sidenet::rng::Rng;
use sidenet::text::corpus::{corpus_examples, Task};
use sidenet::text::synth::generate_synthetic_corpus;
use sidenet::text::vocab::build_vocab;

fn main() -> sidenet::Result<()> {
    let corpus = generate_synthetic_corpus(Task::Label, 300, 3);
    let vocab = build_vocab(corpus.all_text(), 1)?;
    let examples = corpus_examples(&corpus, &vocab, Task::Label, 5)?;
    println!("|V| = {}, {} training examples", vocab.size(), examples.len());

    let cfg = TrainLmConfig {
        model: LmConfig { d: 32, layers: 2, heads: 2, lmax: 96 },
        steps: 400,
        ..Default::default()
    };
    let (mut lm, trace) = train_base_lm(&examples, vocab.size(), &cfg, 3)?;
    println!(
        "mean NLL: {:.3} (step 1) -> {:.3} (step {}); ln|V| = {:.3}",
        trace[0],
        trace.last().unwrap(),
        trace.len(),
        (vocab.size() as f64).ln()
    );
    lm.freeze();

    let gen = GenerationConfig { top_k: 10, max_len: 14, seed: 0 };
    for (i, ex) in examples.iter().take(3).enumerate() {
        let mut rng = Rng::derive(17, &format!("sample-{i}"));
        let tokens = generate_base(&lm, &ex.context, &gen, &mut rng)?;
        println!("context: {}", vocab.decode(&ex.context.concat()));
        println!("  sampled: {}", vocab.decode(&tokens));
    }
    Ok(())
}
