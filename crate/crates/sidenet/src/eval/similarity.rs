//! Knowledge-document controllability: cosine similarity between the mean
//! word vector of the generated response and of the document, stopwords
//! and out-of-embedding words removed.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lm::model::BaseLm;
use crate::text::vocab::Vocabulary;

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    map: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl EmbeddingTable {
    /// Load a GloVe-layout text file: one `word v1 v2 ... vd` per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
        let mut map = HashMap::new();
        let mut dim = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts
                .next()
                .ok_or_else(|| Error::Corpus(format!("{}:{}: empty line", path.display(), lineno + 1)))?;
            let vec: Vec<f64> = parts
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::Corpus(format!("{}:{}: bad value '{t}'", path.display(), lineno + 1))
                    })
                })
                .collect::<Result<_>>()?;
            if dim == 0 {
                dim = vec.len();
            } else if vec.len() != dim {
                return Err(Error::Corpus(format!(
                    "{}:{}: dimension {} differs from {}",
                    path.display(),
                    lineno + 1,
                    vec.len(),
                    dim
                )));
            }
            map.insert(word.to_string(), vec);
        }
        if map.is_empty() {
            return Err(Error::Corpus(format!("{}: empty embedding file", path.display())));
        }
        Ok(EmbeddingTable { map, dim })
    }

    /// Fallback: the base model's input embeddings keyed by vocabulary word.
    pub fn from_base_lm(lm: &BaseLm, vocab: &Vocabulary) -> Result<Self> {
        let table = &lm.params.by_name("embed.token")?.value;
        let mut map = HashMap::new();
        for id in 5..vocab.size() {
            map.insert(vocab.token(id).to_string(), table.row_slice(id).to_vec());
        }
        Ok(EmbeddingTable { map, dim: lm.config.d })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, Vec<f64>)>) -> Self {
        let mut map = HashMap::new();
        let mut dim = 0;
        for (w, v) in entries {
            dim = v.len();
            map.insert(w, v);
        }
        EmbeddingTable { map, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.map.get(word).map(|v| v.as_slice())
    }
}

fn mean_vector(tokens: &[String], emb: &EmbeddingTable, stop: &HashSet<String>) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; emb.dim()];
    let mut n = 0usize;
    for tok in tokens {
        if stop.contains(tok) {
            continue;
        }
        if let Some(v) = emb.get(tok) {
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b;
            }
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    for a in acc.iter_mut() {
        *a /= n as f64;
    }
    Some(acc)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Cosine of the two mean vectors. Returns `(score, flagged)` where the
/// flag marks examples for which either side had no usable words (those
/// score 0.0 and are reported).
pub fn knowledge_similarity(
    response: &[String],
    document: &[String],
    emb: &EmbeddingTable,
    stopwords: &HashSet<String>,
) -> (f64, bool) {
    match (
        mean_vector(response, emb, stopwords),
        mean_vector(document, emb, stopwords),
    ) {
        (Some(a), Some(b)) => (cosine(&a, &b), false),
        _ => (0.0, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    fn toy_table() -> EmbeddingTable {
        EmbeddingTable::from_entries([
            ("cat".to_string(), vec![1.0, 0.0]),
            ("dog".to_string(), vec![0.0, 1.0]),
            ("bird".to_string(), vec![1.0, 1.0]),
        ])
    }

    #[test]
    fn identical_token_sets_score_one() {
        let emb = toy_table();
        let stop = HashSet::new();
        let (s, flagged) = knowledge_similarity(&toks("cat dog"), &toks("dog cat"), &emb, &stop);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(!flagged);
    }

    #[test]
    fn orthogonal_words_score_zero() {
        let emb = toy_table();
        let stop = HashSet::new();
        let (s, _) = knowledge_similarity(&toks("cat"), &toks("dog"), &emb, &stop);
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn hand_computed_cosine() {
        // response mean [1, 0], document mean [0.5, 0.5] -> cos = 1/sqrt(2).
        let emb = toy_table();
        let stop = HashSet::new();
        let (s, _) = knowledge_similarity(&toks("cat"), &toks("cat dog"), &emb, &stop);
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12, "s = {s}");
    }

    #[test]
    fn empty_after_filtering_flags_and_scores_zero() {
        let emb = toy_table();
        let stop: HashSet<String> = ["the".to_string()].into_iter().collect();
        let (s, flagged) = knowledge_similarity(&toks("the unknown"), &toks("cat"), &emb, &stop);
        assert_eq!(s, 0.0);
        assert!(flagged);
    }

    #[test]
    fn invariant_to_duplicate_stopwords_and_order() {
        let emb = toy_table();
        let stop: HashSet<String> = ["the".to_string()].into_iter().collect();
        let (a, _) =
            knowledge_similarity(&toks("cat bird dog"), &toks("bird cat"), &emb, &stop);
        let (b, _) = knowledge_similarity(
            &toks("the dog the the bird cat the"),
            &toks("cat the bird the the"),
            &emb,
            &stop,
        );
        assert!((a - b).abs() < 1e-12);
    }
}
