//! gbemt: a desk-scale multilingual neural machine translation toolkit.
//!
//! The pipeline mirrors a low-resource English-to-Gbe translation study:
//! parallel corpora are cleaned ([`corpus`]), tokenized with byte-pair
//! encoding ([`bpe`]), fed to a tag-conditioned Transformer trained from
//! scratch on a reverse-mode tape ([`tensor`], [`model`], [`training`]),
//! decoded with beam search ([`decoding`]), and scored with BLEU, chrF,
//! and TER ([`metrics`]). The [`experiment`] harness reproduces the
//! bilingual-versus-multilingual comparison end to end and emits the
//! familiar two-table report.
//!
//! Every random choice derives from one seed ([`rng`]), so corpora,
//! checkpoints, and reports are byte-identical across reruns.
//!
//! The `examples/` directory has one runnable program per capability:
//!
//! ```text
//! cargo run --example corpus_filtering
//! cargo run --example bpe_tokenizer
//! cargo run --example autodiff
//! cargo run --example train_translation_model
//! cargo run --example tagged_multilingual
//! cargo run --example evaluate_metrics
//! cargo run --example experiment_harness
//! ```
//!
//! A thin `gbemt` binary exposes the same functionality as subcommands
//! (`prepare`, `bpe`, `train`, `translate`, `evaluate`, `experiment`,
//! `stats`).

pub mod bpe;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
