//! Controlled dialogue generation with small trainable side networks
//! attached to a frozen causal language model.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`], [`graph`], [`params`], [`optim`], [`fdcheck`]: a minimal
//!   reverse-mode autodiff engine over dense f64 matrices, with AdamW and
//!   finite-difference gradient verification.
//! - [`text`]: tokenization, vocabulary, JSONL corpus ingestion, context
//!   windowing, and seeded synthetic corpus generators.
//! - [`lm`]: a small causal transformer trained from scratch, then frozen
//!   as the base network supplying last hidden states.
//! - [`side`]: the controlled-generation framework itself; side networks
//!   fused with the frozen base for knowledge-document and semantic-label
//!   control, plus their control losses.
//! - [`baselines`]: full fine-tuning, discriminator-weighted decoding, and
//!   gradient-steered decoding for comparison.
//! - [`eval`]: controllability, text-quality, and decoding-cost metrics.
//! - [`cli`]: the `sidenet` binary's subcommands and the interactive REPL.
//!
//! See the crate-level `examples/` directory for one runnable example per
//! capability.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod fdcheck;
pub mod graph;
pub mod lm;
pub mod optim;
pub mod params;
pub mod rng;
pub mod side;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
