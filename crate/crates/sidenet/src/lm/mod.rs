//! The base network: a small causal transformer language model trained from
//! scratch on the corpus and then frozen. Side networks and decode-time
//! baselines consume only its last hidden states and output head.

pub mod model;
pub mod sample;
pub mod train;

pub use model::{pack_generation_prefix, pack_sequence, BaseLm, LmConfig};
pub use sample::{sample_top_k, GenerationConfig};
pub use train::{train_base_lm, TrainLmConfig};
