//! Sequence labeling for code-switched text.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: annotated/raw corpora, vocabularies, statistics and a
//!   synthetic code-switched corpus generator.
//! - [`embed`]: subword skip-gram embeddings with negative sampling, corpus
//!   composition recipes and OOV composition.
//! - [`align`]: orthogonal Procrustes projection between embedding spaces.
//! - [`nn`]: the small numerical core (LSTM, linear layers, CRF, Adam).
//! - [`tagger`]: BiLSTM-CRF and the two multi-task variants.
//! - [`eval`]: accuracy, error rankings, CS-point and CS-fragment statistics.
//! - [`experiment`]: config-driven experiment runner and report tables.

pub mod align;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod nn;
pub mod tagger;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
