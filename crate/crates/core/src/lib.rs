//! Stem-driven neural language modeling for morphologically rich languages.
//!
//! The crate is organized as a pipeline:
//!
//! - [`corpus`]: tokenization, vocabularies, corpus encoding, truncated-BPTT
//!   batching, and corpus statistics.
//! - [`stemmer`]: unsupervised stem identification from affix-pair rules,
//!   stem classes, the randomized control shuffle, and stem-map files.
//! - [`numerics`]: dense 2-D tensors with reverse-mode differentiation, the
//!   LSTM recurrence, softmax/cross-entropy, and SGD/Adam optimizers.
//! - [`models`]: single-softmax and mixture-of-softmax LSTM language models,
//!   multi-task training variants, word/stem probability composition, and
//!   checkpoints.
//! - [`eval`]: perplexity, stem-sliced perplexity, multi-seed aggregation,
//!   and the randomized-stem control comparison.
//! - [`synth`]: a seeded stem×suffix grammar for generating synthetic
//!   corpora with learnable morphological structure.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod stemmer;
pub mod synth;

pub use error::{Error, Result};
