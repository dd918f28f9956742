//! Per-query sparse/dense/hybrid retrieval, reciprocal rank fusion, cross-
//! query merging, and the pointwise LLM reranker with threshold filtering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{dense_search, DenseIndex, Embedder};
use crate::gateway::{ChatGateway, ChatRequest, GatewayError};
use crate::prompts::{self, PromptError, PromptRegistry};
use crate::sparse::{bm25_search, IndexError, ScoredHit, SparseIndex};

/// Logprob assigned to a Yes/No token that is absent from the top-logprobs
/// list. exp(-20) is about 2e-9, effectively zero probability.
pub const MISSING_TOKEN_LOGPROB: f64 = -20.0;

/// Number of candidates kept when every document scores below the rerank
/// threshold.
pub const RERANK_FALLBACK_KEEP: usize = 3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("{0} index is required but was not built")]
    MissingIndex(&'static str),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Sparse,
    Dense,
    Hybrid,
}

impl std::str::FromStr for RetrievalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sparse" => Ok(RetrievalMode::Sparse),
            "dense" => Ok(RetrievalMode::Dense),
            "hybrid" => Ok(RetrievalMode::Hybrid),
            other => Err(format!("unknown retrieval mode '{other}'")),
        }
    }
}

impl std::fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RetrievalMode::Sparse => "sparse",
            RetrievalMode::Dense => "dense",
            RetrievalMode::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedHit {
    pub chunk_ref: String,
    pub fused_score: f64,
    /// Source label -> 1-based rank in that source's list.
    pub per_source_ranks: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusedRanking {
    pub hits: Vec<FusedHit>,
}

impl FusedRanking {
    pub fn chunk_refs(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.chunk_ref.as_str()).collect()
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.hits.truncate(k);
        self
    }
}

/// Reciprocal rank fusion: `score(d) = sum over lists containing d of
/// 1/(k + rank(d))`, ranks 1-based. Sorted descending, lexicographic
/// tie-break on the chunk ref.
pub fn rrf_fuse(rankings: &[(String, Vec<String>)], k: usize) -> FusedRanking {
    let mut scores: BTreeMap<&str, (f64, BTreeMap<String, usize>)> = BTreeMap::new();
    for (source, list) in rankings {
        for (i, chunk_ref) in list.iter().enumerate() {
            let rank = i + 1;
            let entry = scores.entry(chunk_ref).or_default();
            // First occurrence in a list wins if a source repeats a doc.
            if entry.1.contains_key(source) {
                continue;
            }
            entry.0 += 1.0 / (k as f64 + rank as f64);
            entry.1.insert(source.clone(), rank);
        }
    }
    let mut hits: Vec<FusedHit> = scores
        .into_iter()
        .map(|(chunk_ref, (fused_score, per_source_ranks))| FusedHit {
            chunk_ref: chunk_ref.to_string(),
            fused_score,
            per_source_ranks,
        })
        .collect();
    hits.sort_by(|a, b| {
        b.fused_score
            .partial_cmp(&a.fused_score)
            .unwrap()
            .then_with(|| a.chunk_ref.cmp(&b.chunk_ref))
    });
    FusedRanking { hits }
}

fn hits_to_refs(hits: &[ScoredHit]) -> Vec<String> {
    hits.iter().map(|h| h.chunk_ref.clone()).collect()
}

fn ranking_from_hits(source: &str, hits: &[ScoredHit]) -> FusedRanking {
    FusedRanking {
        hits: hits
            .iter()
            .map(|h| FusedHit {
                chunk_ref: h.chunk_ref.clone(),
                fused_score: h.score,
                per_source_ranks: BTreeMap::from([(source.to_string(), h.rank)]),
            })
            .collect(),
    }
}

/// The index handles a retriever needs; any subset may be present depending
/// on the retrieval mode.
pub struct Retriever<'a> {
    pub sparse: Option<&'a SparseIndex>,
    pub dense: Option<(&'a DenseIndex, &'a dyn Embedder)>,
    /// RRF constant, 60 unless configured otherwise.
    pub rrf_k: usize,
}

impl<'a> Retriever<'a> {
    pub fn new(
        sparse: Option<&'a SparseIndex>,
        dense: Option<(&'a DenseIndex, &'a dyn Embedder)>,
    ) -> Self {
        Retriever {
            sparse,
            dense,
            rrf_k: 60,
        }
    }

    /// Sparse and dense modes wrap the respective index; hybrid fuses the two
    /// top-k lists with RRF and truncates back to `top_k`.
    pub fn retrieve_for_query(
        &self,
        query: &str,
        mode: RetrievalMode,
        top_k: usize,
    ) -> Result<FusedRanking, RetrievalError> {
        match mode {
            RetrievalMode::Sparse => {
                let index = self.sparse.ok_or(RetrievalError::MissingIndex("sparse"))?;
                Ok(ranking_from_hits("sparse", &bm25_search(index, query, top_k)))
            }
            RetrievalMode::Dense => {
                let (index, embedder) =
                    self.dense.ok_or(RetrievalError::MissingIndex("dense"))?;
                Ok(ranking_from_hits(
                    "dense",
                    &dense_search(index, query, embedder, top_k)?,
                ))
            }
            RetrievalMode::Hybrid => {
                let sparse_index = self.sparse.ok_or(RetrievalError::MissingIndex("sparse"))?;
                let (dense_index, embedder) =
                    self.dense.ok_or(RetrievalError::MissingIndex("dense"))?;
                let sparse_hits = bm25_search(sparse_index, query, top_k);
                let dense_hits = dense_search(dense_index, query, embedder, top_k)?;
                let fused = rrf_fuse(
                    &[
                        ("sparse".to_string(), hits_to_refs(&sparse_hits)),
                        ("dense".to_string(), hits_to_refs(&dense_hits)),
                    ],
                    self.rrf_k,
                );
                Ok(fused.truncated(top_k))
            }
        }
    }
}

/// Second-level RRF across per-query rankings, deduplicated and truncated to
/// `final_k`. Reuses the same k as first-level fusion.
pub fn merge_across_queries(
    per_query: &[FusedRanking],
    final_k: usize,
    rrf_k: usize,
) -> FusedRanking {
    let lists: Vec<(String, Vec<String>)> = per_query
        .iter()
        .enumerate()
        .map(|(i, ranking)| {
            (
                format!("query_{i}"),
                ranking.hits.iter().map(|h| h.chunk_ref.clone()).collect(),
            )
        })
        .collect();
    rrf_fuse(&lists, rrf_k).truncated(final_k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedDoc {
    pub chunk_ref: String,
    pub yes_likelihood: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub docs: Vec<RerankedDoc>,
    /// Set when no document met the threshold and the top candidates were
    /// kept anyway.
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn token_matches(token: &str, target: &str) -> bool {
    token.trim().eq_ignore_ascii_case(target)
}

/// Two-way softmax over the Yes/No first-token logprobs:
/// `exp(l_yes) / (exp(l_yes) + exp(l_no))`. Token matching is
/// case-insensitive and tolerant of leading-space tokenizer forms; a missing
/// token gets [`MISSING_TOKEN_LOGPROB`]; if neither token appears the score
/// is 0 with a warning.
pub fn yes_likelihood_from_logprobs(
    logprobs: &[crate::gateway::TokenLogprob],
) -> (f64, Option<String>) {
    let find = |target: &str| {
        logprobs
            .iter()
            .find(|lp| token_matches(&lp.token, target))
            .map(|lp| lp.logprob)
    };
    let l_yes = find("Yes");
    let l_no = find("No");
    match (l_yes, l_no) {
        (None, None) => (
            0.0,
            Some("neither 'Yes' nor 'No' found in top logprobs".to_string()),
        ),
        (yes, no) => {
            let l_yes = yes.unwrap_or(MISSING_TOKEN_LOGPROB);
            let l_no = no.unwrap_or(MISSING_TOKEN_LOGPROB);
            let p = 1.0 / (1.0 + (l_no - l_yes).exp());
            (p, None)
        }
    }
}

pub struct Reranker<'a> {
    pub gateway: &'a dyn ChatGateway,
    pub prompts: &'a PromptRegistry,
    pub top_logprobs_k: u32,
}

impl<'a> Reranker<'a> {
    pub fn new(gateway: &'a dyn ChatGateway, prompts: &'a PromptRegistry) -> Self {
        Reranker {
            gateway,
            prompts,
            top_logprobs_k: 10,
        }
    }

    /// Scores one (question, document) pair as the model's probability of
    /// answering "Yes".
    pub fn rerank_score(
        &self,
        question: &str,
        chunk_text: &str,
    ) -> Result<(f64, Option<String>), RetrievalError> {
        let (system, user) = self.prompts.render(
            prompts::RERANK_POINTWISE,
            &[("doc_text", chunk_text), ("question", question)],
        )?;
        let request = ChatRequest::new(&system, &user).with_logprobs(self.top_logprobs_k);
        let response = self.gateway.complete(&request)?;
        let logprobs = response
            .first_token_logprobs
            .ok_or(GatewayError::LogprobsUnsupported)?;
        Ok(yes_likelihood_from_logprobs(&logprobs))
    }

    /// Scores every candidate, sorts by likelihood descending (stable with
    /// respect to the fused order on exact ties), and keeps those at or above
    /// `threshold`. If nothing survives, the top [`RERANK_FALLBACK_KEEP`]
    /// are kept and the fallback flag is set.
    pub fn rerank_filter(
        &self,
        question: &str,
        fused: &FusedRanking,
        chunk_text: impl Fn(&str) -> String,
        threshold: f64,
    ) -> Result<RerankOutcome, RetrievalError> {
        let mut warnings = Vec::new();
        let mut docs: Vec<RerankedDoc> = Vec::with_capacity(fused.hits.len());
        for hit in &fused.hits {
            let text = chunk_text(&hit.chunk_ref);
            let (score, warning) = self.rerank_score(question, &text)?;
            if let Some(w) = warning {
                warnings.push(format!("{}: {w}", hit.chunk_ref));
            }
            docs.push(RerankedDoc {
                chunk_ref: hit.chunk_ref.clone(),
                yes_likelihood: score,
                kept: score >= threshold,
            });
        }
        // Stable sort preserves fused order on exact ties.
        docs.sort_by(|a, b| b.yes_likelihood.partial_cmp(&a.yes_likelihood).unwrap());
        let mut fallback_used = false;
        if !docs.is_empty() && docs.iter().all(|d| !d.kept) {
            fallback_used = true;
            for doc in docs.iter_mut().take(RERANK_FALLBACK_KEEP) {
                doc.kept = true;
            }
        }
        Ok(RerankOutcome {
            docs,
            fallback_used,
            warnings,
        })
    }
}
