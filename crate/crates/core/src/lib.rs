//! Two-stage passage ranking at desk scale.
//!
//! The pipeline mirrors the classic retrieve-then-rerank setup: an inverted
//! index with BM25 scoring produces candidate passages per query, and a small
//! transformer cross-encoder re-orders those candidates by a learned
//! relevance probability. The crate also ships the surrounding machinery:
//! corpus/run-file parsers, a WordPiece-style tokenizer, a from-scratch
//! training loop (summed cross-entropy, Adam with warmup + linear decay),
//! and MRR@10 / MAP evaluation.
//!
//! Everything is deterministic under explicit seeds; no component reads the
//! wall clock or global RNG state.

pub mod bm25;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
