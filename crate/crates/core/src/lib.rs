//! Data-centric financial analysis pipeline.
//!
//! The crate is organized around the stages of the workflow:
//!
//! - [`corpus`]: JSONL corpus ingestion, checksummed snapshots, persistence.
//! - [`gateway`]: language-model backends (remote chat-completion endpoints
//!   and a deterministic scriptable mock) plus the prompt-template engine.
//! - [`matcher`]: lexical event matching over an inverted index (BM25) with
//!   optional LLM-based analogy reranking.
//! - [`viewpoint`]: sentence segmentation, viewpoint quality scoring, and
//!   budgeted selection of the most insightful sentences.
//! - [`keypoint`]: structured key-point extraction (industry, indicators,
//!   perspectives, sentiment) with a tolerant field-tagged parser.
//! - [`aar`]: the abductive augmentation loop (question generation,
//!   knowledge-grounded answering, question-answer fusion) that revises
//!   pseudo-labels.
//! - [`pipeline`]: end-to-end orchestration with ablation modes and
//!   persisted run records.
//! - [`eval`]: metrics (P/R/F1, accuracy, BLEU, key-point accuracy, rating
//!   aggregation), the learning-curve runner, and report rendering.
//!
//! Batch operations are data-parallel via rayon when the `parallel` feature
//! (default) is enabled and fall back to sequential iteration otherwise; see
//! [`exec`].

pub mod aar;
pub mod corpus;
pub mod eval;
pub mod exec;
pub mod gateway;
pub mod keypoint;
pub mod matcher;
pub mod pipeline;
pub mod viewpoint;
