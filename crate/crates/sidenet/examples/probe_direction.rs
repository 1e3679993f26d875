//! Diagnostic: which vocabulary tokens does each act's classifier direction
//! boost when added to a fused hidden state? If the control loss is doing
//! its job, pushing side representations toward an act's classifier column
//! should raise exactly that act's surface-signature tokens.

use sidenet::lm::model::LmConfig;
use sidenet::lm::train::{train_base_lm, TrainLmConfig};
use sidenet::side::train::{pretrain_classifier, ClassifierTrainConfig};
use sidenet::text::corpus::{corpus_examples, Task};
use sidenet::text::synth::{generate_synthetic_corpus, ACT_NAMES};
use sidenet::text::vocab::build_vocab;

fn main() -> sidenet::Result<()> {
    let corpus = generate_synthetic_corpus(Task::Label, 400, 11);
    let vocab = build_vocab(corpus.all_text(), 1)?;
    let examples = corpus_examples(&corpus, &vocab, Task::Label, 5)?;
    let cfg = TrainLmConfig {
        model: LmConfig::default(),
        steps: 300,
        ..Default::default()
    };
    let (mut lm, _) = train_base_lm(&examples, vocab.size(), &cfg, 11)?;
    lm.freeze();
    let clf = pretrain_classifier(&lm, &examples, &ClassifierTrainConfig::default(), 12)?;

    // A typical base state: the first response position of one example.
    let ex = &examples[0];
    let h_b = lm.hidden_states(&ex.context, &ex.response)?;
    let h0: Vec<f64> = h_b.row_slice(0).to_vec();
    let base_dist = lm.next_token_dist(&h0)?;

    let w_clf = clf.weight();
    for act in 0..4 {
        // The act's classifier column, unit-normalized, added with the
        // magnitude a tanh-bounded side representation could contribute at
        // alpha = 0.5.
        let dir: Vec<f64> = (0..lm.config.d).map(|j| w_clf.at(j, act)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = 0.5 * (lm.config.d as f64).sqrt() / norm;
        let shifted: Vec<f64> =
            h0.iter().zip(dir.iter()).map(|(&h, &d)| h + d * scale).collect();
        let dist = lm.next_token_dist(&shifted)?;
        let mut gains: Vec<(usize, f64)> = dist
            .iter()
            .zip(base_dist.iter())
            .enumerate()
            .map(|(i, (&p, &q))| (i, p.max(1e-12).ln() - q.max(1e-12).ln()))
            .collect();
        gains.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let top: Vec<String> = gains
            .iter()
            .take(8)
            .map(|(i, g)| format!("{}(+{g:.2})", vocab.token(*i)))
            .collect();
        println!("{:>11}: {}", ACT_NAMES[act], top.join(" "));
    }
    Ok(())
}
