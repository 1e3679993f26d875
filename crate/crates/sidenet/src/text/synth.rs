//! Seeded synthetic corpus generators.
//!
//! Desk-scale stand-ins for real dialogue data, built so that
//! controllability trends are measurable:
//!
//! - Knowledge task: each dialogue carries a persona of 3-5 templated facts
//!   over a 200-word content lexicon, and every ground-truth response copies
//!   2-4 content words from one of those facts.
//! - Label task: every response's dialogue act is realized by a distinct
//!   surface signature, making the corpus exactly taggable by
//!   [`rule_act_tag`] (the oracle used to sanity-check trained classifiers).
//!
//! Everything is a pure function of the seed: the same seed yields a
//! byte-identical corpus.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::rng::Rng;
use crate::text::corpus::{Corpus, RawDialogue, Task};
use crate::text::vocab::tokenize;

pub const ACT_NAMES: [&str; 4] = ["inform", "question", "directive", "commissive"];

pub const ACT_INFORM: usize = 0;
pub const ACT_QUESTION: usize = 1;
pub const ACT_DIRECTIVE: usize = 2;
pub const ACT_COMMISSIVE: usize = 3;

/// 200-word content lexicon shared by both generators.
pub const CONTENT_WORDS: [&str; 200] = [
    "cat", "dog", "horse", "rabbit", "turtle", "parrot", "falcon", "otter", "badger", "fox",
    "wolf", "bear", "deer", "moose", "bison", "eagle", "owl", "heron", "salmon", "trout",
    "apple", "mango", "pasta", "cheese", "bread", "honey", "butter", "pepper", "garlic", "onion",
    "tomato", "lemon", "olive", "salad", "soup", "stew", "curry", "rice", "noodle", "cake",
    "coffee", "tea", "juice", "cider", "cocoa", "hiking", "fishing", "painting", "knitting", "chess",
    "gardening", "cycling", "swimming", "surfing", "skiing", "archery", "pottery", "baking", "dancing", "singing",
    "reading", "writing", "drumming", "climbing", "rowing", "beach", "forest", "mountain", "valley", "river",
    "lake", "desert", "island", "harbor", "castle", "museum", "library", "garden", "market", "bridge",
    "temple", "tower", "meadow", "canyon", "village", "guitar", "piano", "violin", "camera", "bicycle",
    "lantern", "compass", "hammer", "ladder", "basket", "mirror", "candle", "blanket", "pillow", "telescope",
    "notebook", "backpack", "umbrella", "kettle", "wagon", "sunset", "sunrise", "rainbow", "thunder", "breeze",
    "snowfall", "blossom", "maple", "cedar", "willow", "fern", "moss", "coral", "pebble", "boulder",
    "glacier", "aurora", "dune", "tide", "gale", "jacket", "scarf", "mitten", "sweater", "sandal",
    "helmet", "apron", "sailor", "farmer", "baker", "painter", "teacher", "doctor", "pilot", "dancer",
    "poet", "tailor", "soccer", "tennis", "hockey", "cricket", "rugby", "golf", "puzzle", "marble",
    "kite", "drum", "flute", "trumpet", "harp", "banjo", "sled", "canoe", "kayak", "tent",
    "raft", "saddle", "arrow", "shield", "crown", "jewel", "amber", "pearl", "comet", "meteor",
    "nebula", "planet", "cavern", "lagoon", "orchard", "vineyard", "prairie", "tundra", "lighthouse", "windmill",
    "cottage", "cabin", "barn", "quilt", "anchor", "violet", "clover", "acorn", "walnut", "chestnut",
    "raven", "sparrow", "finch", "dolphin", "whale", "seal", "crab", "oyster", "lobster", "shrimp",
];

const ADJECTIVES: [&str; 16] = [
    "nice", "fine", "calm", "bright", "warm", "quiet", "fancy", "plain", "fresh", "soft",
    "tall", "small", "clean", "sturdy", "golden", "gentle",
];

const WH_WORDS: [&str; 6] = ["what", "where", "when", "why", "how", "who"];

/// Classify an utterance by its surface signature. On the synthetic label
/// corpus this tagger is exact by construction, which makes it the oracle
/// for every trained act classifier.
pub fn rule_act_tag(text: &str) -> usize {
    let toks = tokenize(text);
    if toks.is_empty() {
        return ACT_INFORM;
    }
    let first = toks[0].as_str();
    let last = toks[toks.len() - 1].as_str();
    if WH_WORDS.contains(&first) && last == "?" {
        return ACT_QUESTION;
    }
    if first == "please" || first == "let" {
        return ACT_DIRECTIVE;
    }
    if toks.len() >= 2 && (first == "i" || first == "we") && toks[1] == "will" {
        return ACT_COMMISSIVE;
    }
    ACT_INFORM
}

fn fact_sentence(rng: &mut Rng, words: &[&str]) -> (String, Vec<String>) {
    // Template index also fixes how many content words the fact carries;
    // most facts carry 4 so responses have room to copy long chains.
    let n_words = match rng.below(4) {
        0 => 3,
        _ => 4,
    };
    let picked: Vec<&str> = rng
        .choose_distinct(words.len(), n_words)
        .into_iter()
        .map(|i| words[i])
        .collect();
    let text = match n_words {
        3 => match rng.below(2) {
            0 => format!("i enjoy {} with {} and {}", picked[0], picked[1], picked[2]),
            _ => format!("i love {} and {} and {}", picked[0], picked[1], picked[2]),
        },
        _ => match rng.below(3) {
            0 => format!(
                "my hobbies are {} and {} and {} and {}",
                picked[0], picked[1], picked[2], picked[3]
            ),
            1 => format!(
                "i love {} and {} and {} and {}",
                picked[0], picked[1], picked[2], picked[3]
            ),
            _ => format!(
                "my favorite {} is the {} with {} and {}",
                picked[0], picked[1], picked[2], picked[3]
            ),
        },
    };
    (text, picked.into_iter().map(|s| s.to_string()).collect())
}

fn knowledge_response(rng: &mut Rng, fact_words: &[String]) -> String {
    // Copy 3-4 distinct content words (within the 2-4 contract) so the
    // "w and w and w" chain is the dominant response pattern.
    let n_copy = rng.range(3.min(fact_words.len()), fact_words.len().min(4));
    let mut idx = rng.choose_distinct(fact_words.len(), n_copy);
    idx.sort_unstable();
    let copied: Vec<&str> = idx.iter().map(|&i| fact_words[i].as_str()).collect();
    let prefix = match rng.below(4) {
        0 => "well i really like",
        1 => "oh yes i love",
        2 => "you know i enjoy",
        _ => "i must say i like",
    };
    let suffix = match rng.below(3) {
        0 => ".",
        1 => "very much .",
        _ => "a lot .",
    };
    format!("{prefix} {} {suffix}", copied.join(" and "))
}

fn label_utterance(rng: &mut Rng, act: usize) -> String {
    let noun = CONTENT_WORDS[rng.below(CONTENT_WORDS.len())];
    let adj = ADJECTIVES[rng.below(ADJECTIVES.len())];
    match act {
        ACT_QUESTION => {
            let wh = WH_WORDS[rng.below(WH_WORDS.len())];
            match rng.below(3) {
                0 => format!("{wh} do you think about the {noun} ?"),
                1 => format!("{wh} is the {noun} so {adj} ?"),
                _ => format!("{wh} did you find the {noun} ?"),
            }
        }
        ACT_DIRECTIVE => match rng.below(4) {
            0 => format!("please tell me about the {noun} ."),
            1 => format!("please bring the {noun} here ."),
            2 => format!("let us talk about the {noun} ."),
            _ => format!("let me see the {adj} {noun} ."),
        },
        ACT_COMMISSIVE => match rng.below(4) {
            0 => format!("i will bring the {noun} tomorrow ."),
            1 => format!("i will take care of the {noun} ."),
            2 => format!("we will visit the {noun} soon ."),
            _ => format!("we will find a {adj} {noun} ."),
        },
        // Inform shares first words with commissive ("i", "we") so prefixes
        // of length one stay ambiguous; only "will" in second position
        // marks a commitment.
        _ => match rng.below(7) {
            0 => format!("the {noun} is {adj} ."),
            1 => format!("my {noun} seems {adj} today ."),
            2 => format!("this {noun} looks rather {adj} ."),
            3 => format!("our {noun} was {adj} yesterday ."),
            4 => format!("i saw a {adj} {noun} yesterday ."),
            5 => format!("i liked the {noun} quite a bit ."),
            _ => format!("we found the {noun} rather {adj} ."),
        },
    }
}

/// Deterministic synthetic corpus for either task.
pub fn generate_synthetic_corpus(task: Task, n_dialogues: usize, seed: u64) -> Corpus {
    assert!(n_dialogues >= 1);
    let mut rng = Rng::derive(seed, "synth");
    let mut dialogues = Vec::with_capacity(n_dialogues);
    for _ in 0..n_dialogues {
        let n_utts = rng.range(4, 8);
        match task {
            Task::Label => {
                let mut utterances = Vec::with_capacity(n_utts);
                let mut acts = Vec::with_capacity(n_utts);
                for _ in 0..n_utts {
                    let act = rng.below(4);
                    utterances.push(label_utterance(&mut rng, act));
                    acts.push(act);
                }
                dialogues.push(RawDialogue { utterances, acts: Some(acts), knowledge: None });
            }
            Task::Knowledge => {
                let n_facts = rng.range(3, 5);
                let mut facts = Vec::with_capacity(n_facts);
                let mut fact_words = Vec::with_capacity(n_facts);
                for _ in 0..n_facts {
                    let (text, words) = fact_sentence(&mut rng, &CONTENT_WORDS);
                    facts.push(text);
                    fact_words.push(words);
                }
                let utterances = (0..n_utts)
                    .map(|_| {
                        let f = rng.below(n_facts);
                        knowledge_response(&mut rng, &fact_words[f])
                    })
                    .collect();
                dialogues.push(RawDialogue {
                    utterances,
                    acts: None,
                    knowledge: Some(facts),
                });
            }
        }
    }
    Corpus { dialogues }
}

/// Emit a GloVe-layout embedding file (`word v1 .. vd` per line) assigning
/// every distinct token of the corpus a seeded random unit vector. The
/// vector depends only on (seed, word), so any two corpora over the same
/// vocabulary agree. Near-orthogonal random directions make the mean-vector
/// cosine behave like a soft overlap measure, which is exactly what the
/// knowledge-similarity metric needs at desk scale.
pub fn write_synthetic_embeddings(corpus: &Corpus, dim: usize, seed: u64, path: &Path) -> Result<()> {
    let mut words: BTreeSet<String> = BTreeSet::new();
    for d in &corpus.dialogues {
        for u in &d.utterances {
            words.extend(tokenize(u));
        }
        for f in d.knowledge.iter().flatten() {
            words.extend(tokenize(f));
        }
    }
    let mut out = String::new();
    for w in &words {
        let mut rng = Rng::derive(seed ^ 0x5eed_e4b3, &format!("embed::{w}"));
        // Box-Muller pairs, then normalize to the unit sphere.
        let mut v = vec![0.0f64; dim];
        let mut i = 0;
        while i < dim {
            let u1 = rng.f64().max(1e-12);
            let u2 = rng.f64();
            let r = (-2.0 * u1.ln()).sqrt();
            v[i] = r * (2.0 * std::f64::consts::PI * u2).cos();
            if i + 1 < dim {
                v[i + 1] = r * (2.0 * std::f64::consts::PI * u2).sin();
            }
            i += 2;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        out.push_str(w);
        for x in &v {
            let _ = write!(out, " {:.6}", x / norm);
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
