//! Wall-clock decoding cost per token: the same 10 contexts decoded by the
//! base model, the controlled model, and the gradient-steered baseline,
//! repeated three times with the median reported.

use sidenet::baselines::pplm::{pplm_decode, PplmAttribute, SteeringConfig};
use sidenet::eval::bench::{decoding_benchmark, BenchMethod};
use sidenet::lm::model::LmConfig;
use sidenet::lm::sample::{generate_base, GenerationConfig};
use sidenet::lm::train::{train_base_lm, TrainLmConfig};
use sidenet::rng::Rng;
use sidenet::side::train::{
    generate_controlled, pretrain_classifier, train_side, ClassifierTrainConfig, DecodeOverrides,
    SideTrainConfig,
};
use sidenet::text::corpus::{corpus_examples, ControlAttribute, Task};
use sidenet::text::synth::generate_synthetic_corpus;
use sidenet::text::vocab::build_vocab;

fn main() -> sidenet::Result<()> {
    let corpus = generate_synthetic_corpus(Task::Label, 300, 13);
    let vocab = build_vocab(corpus.all_text(), 1)?;
    let examples = corpus_examples(&corpus, &vocab, Task::Label, 5)?;
    let lm_cfg = TrainLmConfig {
        model: LmConfig { d: 32, layers: 2, heads: 2, lmax: 96 },
        steps: 200,
        ..Default::default()
    };
    let (mut base, _) = train_base_lm(&examples, vocab.size(), &lm_cfg, 13)?;
    base.freeze();
    let clf = pretrain_classifier(
        &base,
        &examples[..200],
        &ClassifierTrainConfig { epochs: 2, ..Default::default() },
        14,
    )?;
    let mut side_cfg = SideTrainConfig::for_task(Task::Label, 1e4);
    side_cfg.max_steps = Some(100);
    side_cfg.eval_interval = 50;
    let trained = train_side(&base, Task::Label, &examples[..400], &examples[400..440], Some(&clf), &side_cfg, 15)?;

    let contexts: Vec<Vec<Vec<usize>>> =
        examples.iter().take(10).map(|e| e.context.clone()).collect();
    let acts: Vec<usize> = examples.iter().take(10).map(|e| e.attribute.act().unwrap()).collect();
    let gen = GenerationConfig { top_k: 10, max_len: 12, seed: 0 };
    let steering = SteeringConfig::for_task(Task::Label);

    let base_ref = &base;
    let net = &trained.net;
    let clf_ref = &clf;
    let methods = vec![
        BenchMethod {
            name: "base".into(),
            run: Box::new(|_| {
                let mut total = 0;
                for (i, ctx) in contexts.iter().enumerate() {
                    let mut rng = Rng::derive(3, &format!("bench-{i}"));
                    total += generate_base(base_ref, ctx, &gen, &mut rng)?.len().max(1);
                }
                Ok(total)
            }),
        },
        BenchMethod {
            name: "side".into(),
            run: Box::new(|_| {
                let mut total = 0;
                for (i, ctx) in contexts.iter().enumerate() {
                    let attr = ControlAttribute::SemanticLabel { act: acts[i] };
                    let mut rng = Rng::derive(3, &format!("bench-{i}"));
                    let (toks, _) = generate_controlled(
                        base_ref, net, ctx, &attr, &gen, DecodeOverrides::default(), &mut rng,
                    )?;
                    total += toks.len().max(1);
                }
                Ok(total)
            }),
        },
        BenchMethod {
            name: "pplm".into(),
            run: Box::new(|_| {
                let mut total = 0;
                for (i, ctx) in contexts.iter().enumerate() {
                    let attr = PplmAttribute::Act { classifier: clf_ref, target: acts[i] };
                    let mut rng = Rng::derive(3, &format!("bench-{i}"));
                    total += pplm_decode(base_ref, &attr, ctx, &steering, &gen, &mut rng)?
                        .len()
                        .max(1);
                }
                Ok(total)
            }),
        },
    ];
    let placeholder: Vec<Vec<Vec<usize>>> = (0..10).map(|i| vec![vec![i]]).collect();
    let results = decoding_benchmark(methods, &placeholder, 3)?;
    for r in &results {
        println!("{:<6} {:.5} s/tok", r.name, r.seconds_per_token);
    }
    let side_spt = results.iter().find(|r| r.name == "side").unwrap().seconds_per_token;
    let pplm_spt = results.iter().find(|r| r.name == "pplm").unwrap().seconds_per_token;
    println!("gradient steering pays {:.1}x the controlled decode per token", pplm_spt / side_spt);
    Ok(())
}
