//! Automatic evaluation: controllability (act accuracy, knowledge cosine
//! similarity), text quality (perplexity, BLEU-1/2, METEOR-lite), and the
//! decoding-cost benchmark.

pub mod accuracy;
pub mod bench;
pub mod bleu;
pub mod meteor;
pub mod perplexity;
pub mod report;
pub mod similarity;

pub use accuracy::{
    controllability_accuracy, train_eval_classifier, EvalClassifier, EvalClfConfig,
};
pub use bench::{decoding_benchmark, BenchMethod, BenchResult};
pub use bleu::corpus_bleu;
pub use meteor::meteor_lite;
pub use perplexity::{test_perplexity, ScoredModel};
pub use report::{render_table, MethodKind, MetricsReport};
pub use similarity::{knowledge_similarity, EmbeddingTable};
