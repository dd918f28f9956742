//! A self-contained RAG laboratory: question augmentation, hybrid BM25/dense
//! retrieval with reciprocal rank fusion, pointwise LLM reranking, answer
//! generation, LLM-as-judge scoring, and a statistics lab for factorial
//! configuration sweeps (grid enumeration, N-way ANOVA, pairwise comparison).
//!
//! Every LLM-dependent stage goes through [`gateway::ChatGateway`], which has
//! both an OpenAI-compatible HTTP client and a deterministic scripted stub, so
//! the whole pipeline runs offline in CI.

pub mod answer;
pub mod augment;
pub mod corpus;
pub mod dense;
pub mod gateway;
pub mod judge;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod sparse;
pub mod stats;

/// Default scalar type for scores and statistics.
pub type Real = f64;
