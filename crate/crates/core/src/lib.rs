//! Text-conditioned protein sequence generation.
//!
//! A decoder-only network where every layer runs three coupled branches: a
//! text self-attention branch, a small cross-modality slot tensor that queries
//! the text, and a causal sequence branch that attends over the slots and its
//! own prefix. The crate covers the math, tokenization, data ingestion,
//! training, sampling and the sequence-level evaluation metrics.

pub mod data;
pub mod evaluation;
pub mod generation;
pub mod model;
pub mod numerics;
pub mod tokenizer;
pub mod training;
