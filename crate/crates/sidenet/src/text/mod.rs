//! Tokenization, vocabulary, corpus ingestion, context windowing, and the
//! seeded synthetic corpus generators.

pub mod corpus;
pub mod stopwords;
pub mod synth;
pub mod vocab;

pub use corpus::{
    corpus_examples, make_examples, ControlAttribute, Corpus, DialogueExample, RawDialogue, Task,
};
pub use stopwords::{default_stopwords, load_stopwords};
pub use synth::{generate_synthetic_corpus, rule_act_tag, write_synthetic_embeddings, ACT_NAMES};
pub use vocab::{build_vocab, tokenize, Vocabulary, BOS_ID, EOS_ID, PAD_ID, SEP_ID, UNK_ID};
