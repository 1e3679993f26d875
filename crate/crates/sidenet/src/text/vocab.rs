//! Word-level tokenizer and vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const UNK_ID: usize = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

const PUNCT: [char; 7] = ['.', ',', '!', '?', '\'', ';', ':'];

/// Lowercase, split on whitespace, and detach `. , ! ? ' ; :` as their own
/// tokens wherever they appear.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut buf = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_whitespace() {
            if !buf.is_empty() {
                out.push(std::mem::take(&mut buf));
            }
        } else if PUNCT.contains(&ch) {
            if !buf.is_empty() {
                out.push(std::mem::take(&mut buf));
            }
            out.push(ch.to_string());
        } else {
            buf.push(ch);
        }
    }
    if !buf.is_empty() {
        out.push(buf);
    }
    out
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn with_tokens(tokens: Vec<String>) -> Self {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { token_to_id, id_to_token }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Join tokens with single spaces; reserved markers are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id >= RESERVED.len() && id < self.size())
            .map(|&id| self.id_to_token[id].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.id_to_token[RESERVED.len()..].iter().map(|s| s.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.id_to_token.join("\n") + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len()
            || lines[..RESERVED.len()] != RESERVED[..]
        {
            return Err(Error::Corpus(format!(
                "{}: not a vocabulary file (reserved markers missing)",
                path.display()
            )));
        }
        Ok(Vocabulary::with_tokens(
            lines[RESERVED.len()..].iter().map(|s| s.to_string()).collect(),
        ))
    }
}

/// Count tokens over all utterances and knowledge facts of a corpus and keep
/// those with count >= `min_freq`, ids assigned in descending-frequency
/// order with lexicographic tie-breaks, after the reserved ids.
pub fn build_vocab<'a, I>(texts: I, min_freq: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    assert!(min_freq >= 1, "min_freq must be >= 1");
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut any = false;
    for text in texts {
        any = true;
        for tok in tokenize(text) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::Corpus("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut kept: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    kept.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    Ok(Vocabulary::with_tokens(kept.into_iter().map(|(t, _)| t).collect()))
}
