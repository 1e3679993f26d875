//! Corpus ingestion and context windowing.
//!
//! Corpora are JSONL, one dialogue per line:
//! `{"utterances": ["...", ...], "acts": [0..3, ...]?, "knowledge": ["fact", ...]?}`
//! with exactly one of `acts` / `knowledge` required depending on the task.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::vocab::{Vocabulary, SEP_ID};

pub const NUM_ACTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Knowledge,
    Label,
}

impl Task {
    /// Dialogue-context window in utterances: the knowledge task uses the
    /// previous 4, the label task the previous 5.
    pub fn default_window(self) -> usize {
        match self {
            Task::Knowledge => 4,
            Task::Label => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Knowledge => "knowledge",
            Task::Label => "label",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knowledge" => Ok(Task::Knowledge),
            "label" => Ok(Task::Label),
            other => Err(Error::Config(format!("unknown task '{other}' (knowledge|label)"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawDialogue {
    pub utterances: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acts: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub dialogues: Vec<RawDialogue>,
}

impl Corpus {
    pub fn load(path: &Path, task: Task) -> Result<Corpus> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
        let mut dialogues = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let d: RawDialogue = serde_json::from_str(line).map_err(|e| {
                Error::Corpus(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            validate_dialogue(&d, task, lineno + 1)?;
            dialogues.push(d);
        }
        if dialogues.is_empty() {
            return Err(Error::Corpus(format!("{}: empty corpus", path.display())));
        }
        Ok(Corpus { dialogues })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for d in &self.dialogues {
            serde_json::to_writer(&mut f, d)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    /// All utterance and knowledge text, for vocabulary building.
    pub fn all_text(&self) -> impl Iterator<Item = &str> {
        self.dialogues.iter().flat_map(|d| {
            d.utterances
                .iter()
                .map(|s| s.as_str())
                .chain(d.knowledge.iter().flatten().map(|s| s.as_str()))
        })
    }
}

fn validate_dialogue(d: &RawDialogue, task: Task, lineno: usize) -> Result<()> {
    if d.utterances.len() < 2 {
        return Err(Error::Corpus(format!(
            "line {lineno}: dialogue needs at least 2 utterances, got {}",
            d.utterances.len()
        )));
    }
    match task {
        Task::Label => {
            let acts = d.acts.as_ref().ok_or_else(|| {
                Error::Corpus(format!("line {lineno}: utterance missing act annotation"))
            })?;
            if acts.len() != d.utterances.len() {
                return Err(Error::Corpus(format!(
                    "line {lineno}: {} acts for {} utterances",
                    acts.len(),
                    d.utterances.len()
                )));
            }
            if let Some(bad) = acts.iter().find(|&&a| a >= NUM_ACTS) {
                return Err(Error::Corpus(format!("line {lineno}: act {bad} out of range 0..4")));
            }
        }
        Task::Knowledge => {
            let know = d.knowledge.as_ref().ok_or_else(|| {
                Error::Corpus(format!("line {lineno}: dialogue missing knowledge annotation"))
            })?;
            if know.is_empty() {
                return Err(Error::Corpus(format!("line {lineno}: empty knowledge document")));
            }
        }
    }
    Ok(())
}

/// Control attribute attached to one training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlAttribute {
    /// Token ids of the external knowledge document (facts joined with SEP).
    KnowledgeDoc { tokens: Vec<usize> },
    /// Dialogue act: 0 inform, 1 question, 2 directive, 3 commissive.
    SemanticLabel { act: usize },
}

impl ControlAttribute {
    pub fn act(&self) -> Option<usize> {
        match self {
            ControlAttribute::SemanticLabel { act } => Some(*act),
            _ => None,
        }
    }

    pub fn knowledge_tokens(&self) -> Option<&[usize]> {
        match self {
            ControlAttribute::KnowledgeDoc { tokens } => Some(tokens),
            _ => None,
        }
    }
}

/// One (context, response, attribute) record. Context is kept per-utterance;
/// sequence packing joins utterances with SEP at model-input time.
#[derive(Clone, Debug)]
pub struct DialogueExample {
    pub context: Vec<Vec<usize>>,
    pub response: Vec<usize>,
    pub attribute: ControlAttribute,
}

/// Encode a knowledge document: facts joined with SEP into one sequence.
/// Out-of-vocabulary words map to UNK, which is where their copy mass goes.
pub fn encode_knowledge_doc(facts: &[String], vocab: &Vocabulary) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, fact) in facts.iter().enumerate() {
        if i > 0 {
            out.push(SEP_ID);
        }
        out.extend(vocab.encode(fact));
    }
    out
}

/// One example per utterance position t >= 2: the response is utterance t,
/// the context is up to `window` preceding utterances, and the attribute is
/// that utterance's act (label task) or the dialogue's knowledge document.
pub fn make_examples(
    d: &RawDialogue,
    vocab: &Vocabulary,
    task: Task,
    window: usize,
    lineno: usize,
) -> Result<Vec<DialogueExample>> {
    validate_dialogue(d, task, lineno)?;
    let mut out = Vec::new();
    for t in 1..d.utterances.len() {
        let lo = t.saturating_sub(window);
        let context: Vec<Vec<usize>> = d.utterances[lo..t]
            .iter()
            .map(|u| vocab.encode(u))
            .filter(|ids| !ids.is_empty())
            .collect();
        let response = vocab.encode(&d.utterances[t]);
        if context.is_empty() || response.is_empty() {
            continue;
        }
        let attribute = match task {
            Task::Label => ControlAttribute::SemanticLabel {
                act: d.acts.as_ref().expect("validated")[t],
            },
            Task::Knowledge => ControlAttribute::KnowledgeDoc {
                tokens: encode_knowledge_doc(d.knowledge.as_ref().expect("validated"), vocab),
            },
        };
        out.push(DialogueExample { context, response, attribute });
    }
    Ok(out)
}

pub fn corpus_examples(
    corpus: &Corpus,
    vocab: &Vocabulary,
    task: Task,
    window: usize,
) -> Result<Vec<DialogueExample>> {
    let mut out = Vec::new();
    for (i, d) in corpus.dialogues.iter().enumerate() {
        out.extend(make_examples(d, vocab, task, window, i + 1)?);
    }
    Ok(out)
}

/// Raw-text counterpart of a [`DialogueExample`], used by the CLI surface
/// (hypothesis files carry text, not ids).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawExample {
    pub context: Vec<String>,
    pub response: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub act: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub facts: Option<Vec<String>>,
}

/// Window a corpus without encoding. Examples whose response or entire
/// context is blank are dropped, mirroring the encoded path.
pub fn windowed_raw(corpus: &Corpus, task: Task, window: usize) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    for (i, d) in corpus.dialogues.iter().enumerate() {
        validate_dialogue(d, task, i + 1)?;
        for t in 1..d.utterances.len() {
            let lo = t.saturating_sub(window);
            let context: Vec<String> = d.utterances[lo..t]
                .iter()
                .filter(|u| !u.trim().is_empty())
                .cloned()
                .collect();
            let response = d.utterances[t].clone();
            if context.is_empty() || response.trim().is_empty() {
                continue;
            }
            out.push(RawExample {
                context,
                response,
                act: match task {
                    Task::Label => Some(d.acts.as_ref().expect("validated")[t]),
                    Task::Knowledge => None,
                },
                facts: match task {
                    Task::Knowledge => d.knowledge.clone(),
                    Task::Label => None,
                },
            });
        }
    }
    Ok(out)
}
