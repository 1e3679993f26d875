//! The gradient-steering baseline: per decoding step, a perturbation on the
//! last few block-input states is pushed up the attribute-model gradient
//! (with a KL anchor to the base distribution), re-running the transformer
//! through the autodiff graph each ascent step. That inner loop is exactly
//! why its per-token cost is an order of magnitude above everything else.

use std::time::Instant;

use sidenet::baselines::discriminator::BagOfWordsAttribute;
use sidenet::baselines::pplm::{pplm_decode, PplmAttribute, SteeringConfig};
use sidenet::lm::model::LmConfig;
use sidenet::lm::sample::{generate_base, GenerationConfig};
use sidenet::lm::train::{train_base_lm, TrainLmConfig};
use sidenet::rng::Rng;
use sidenet::text::corpus::{corpus_examples, Task};
use sidenet::text::synth::generate_synthetic_corpus;
use sidenet::text::vocab::build_vocab;

fn main() -> sidenet::Result<()> {
    let corpus = generate_synthetic_corpus(Task::Knowledge, 200, 9);
    let vocab = build_vocab(corpus.all_text(), 1)?;
    let examples = corpus_examples(&corpus, &vocab, Task::Knowledge, 4)?;

    let lm_cfg = TrainLmConfig {
        model: LmConfig { d: 32, layers: 2, heads: 2, lmax: 96 },
        steps: 300,
        ..Default::default()
    };
    let (mut base, _) = train_base_lm(&examples, vocab.size(), &lm_cfg, 9)?;
    base.freeze();

    let bag_words = ["salmon", "garlic", "onion", "chess", "archery"];
    let bag = BagOfWordsAttribute {
        ids: bag_words.iter().map(|w| vocab.id(w)).collect(),
    };
    let attr = PplmAttribute::Bag(&bag);
    let steering = SteeringConfig::for_task(Task::Knowledge);
    let gen = GenerationConfig { top_k: 10, max_len: 14, seed: 0 };
    let context = vec![vocab.encode("you know i enjoy reading a lot .")];

    let start = Instant::now();
    let mut rng = Rng::derive(61, "decode");
    let steered = pplm_decode(&base, &attr, &context, &steering, &gen, &mut rng)?;
    let steered_time = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut rng = Rng::derive(61, "decode");
    let plain = generate_base(&base, &context, &gen, &mut rng)?;
    let plain_time = start.elapsed().as_secs_f64();

    println!("bag of words: {bag_words:?}");
    println!("  plain   ({plain_time:.3}s): {}", vocab.decode(&plain));
    println!("  steered ({steered_time:.3}s): {}", vocab.decode(&steered));
    println!(
        "  steering cost ratio: {:.1}x the plain decode",
        steered_time / plain_time.max(1e-9)
    );
    Ok(())
}
