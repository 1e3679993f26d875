//! Corpus BLEU with clipped n-gram precision and brevity penalty, no
//! smoothing: a corpus with zero matches at any order reports 0.

use std::collections::HashMap;

use crate::error::{Error, Result};

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU up to `max_n` (1 or 2), scaled to [0, 100]. One
/// reference per hypothesis.
pub fn corpus_bleu(hypotheses: &[Vec<String>], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::invalid("empty corpus for BLEU"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if !(1..=2).contains(&max_n) {
        return Err(Error::invalid("max_n must be 1 or 2"));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, re) in hypotheses.iter().zip(references.iter()) {
        hyp_len += hyp.len();
        ref_len += re.len();
        for n in 1..=max_n {
            let ref_counts = ngram_counts(re, n);
            for (gram, count) in ngram_counts(hyp, n) {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matches[n - 1] += count.min(clip);
            }
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_precision_sum = 0.0;
    for n in 0..max_n {
        if matches[n] == 0 || totals[n] == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (matches[n] as f64 / totals[n] as f64).ln();
    }
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * (log_precision_sum / max_n as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn identical_corpus_scores_100() {
        let refs = vec![toks("the cat sat"), toks("a dog barked loudly")];
        assert!((corpus_bleu(&refs, &refs, 1).unwrap() - 100.0).abs() < 1e-9);
        assert!((corpus_bleu(&refs, &refs, 2).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_vocabulary_scores_0() {
        let hyps = vec![toks("alpha beta")];
        let refs = vec![toks("gamma delta")];
        assert_eq!(corpus_bleu(&hyps, &refs, 1).unwrap(), 0.0);
    }

    #[test]
    fn clipping_hand_case() {
        // "the the the" vs "the cat": clipped unigram precision 1/3, hyp is
        // longer so no brevity penalty -> 33.33.
        let hyps = vec![toks("the the the")];
        let refs = vec![toks("the cat")];
        let bleu = corpus_bleu(&hyps, &refs, 1).unwrap();
        assert!((bleu - 100.0 / 3.0).abs() < 0.01, "bleu = {bleu}");
    }

    #[test]
    fn permutation_invariant_over_example_order() {
        let hyps = vec![toks("a b c"), toks("d e"), toks("f g h i")];
        let refs = vec![toks("a b x"), toks("d y"), toks("f g z i")];
        let forward = corpus_bleu(&hyps, &refs, 2).unwrap();
        let hyps_rev: Vec<_> = hyps.iter().rev().cloned().collect();
        let refs_rev: Vec<_> = refs.iter().rev().cloned().collect();
        let backward = corpus_bleu(&hyps_rev, &refs_rev, 2).unwrap();
        assert_eq!(forward.to_bits(), backward.to_bits());
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(corpus_bleu(&[], &[], 1).is_err());
    }
}
