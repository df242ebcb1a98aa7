//! Context-aware hate and offensive speech classification for code-mixed
//! Hindi-English text.
//!
//! The pipeline runs thread corpora ([`corpus`]) through normalization
//! ([`textprep`]) and subword tokenization ([`tokenizer`]) into a small
//! transformer ([`encoder`]) topped by single- or dual-encoder heads
//! ([`classify`]), trained with [`train`] and scored with [`eval`]. The
//! [`cli`] module wires the stages into the `mixcontext` binary.

pub mod classify;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod rng;
pub mod textprep;
pub mod tokenizer;
pub mod train;
