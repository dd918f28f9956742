//! In-process inverted index with Okapi BM25 scoring.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ChunkedCorpus;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("embedding dimension mismatch: index has {index}, embedder has {embedder}")]
    DimMismatch { index: usize, embedder: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("corrupt index file: {0}")]
    Corrupt(String),
}

/// BM25 parameters. Classic Okapi defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// A scored retrieval hit with a 1-based rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub chunk_ref: String,
    pub score: f64,
    pub rank: usize,
}

/// Sorts (chunk_ref, score) pairs by score descending with lexicographic
/// tie-break, truncates to `top_k`, and assigns 1-based ranks.
pub fn rank_hits(mut scored: Vec<(String, f64)>, top_k: usize) -> Vec<ScoredHit> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(top_k);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (chunk_ref, score))| ScoredHit {
            chunk_ref,
            score,
            rank: i + 1,
        })
        .collect()
}

/// Lowercases and splits on any non-alphanumeric character. No stemming, no
/// stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Inverted index with per-chunk lengths and BM25 parameters. BTreeMaps keep
/// the serialized form byte-stable across rebuilds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseIndex {
    postings: BTreeMap<String, Vec<(String, usize)>>,
    doc_lengths: BTreeMap<String, usize>,
    avg_doc_len: f64,
    n_docs: usize,
    params: Bm25Params,
}

impl SparseIndex {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn build_sparse_index(
    corpus: &ChunkedCorpus,
    params: Bm25Params,
) -> Result<SparseIndex, IndexError> {
    if corpus.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    let mut postings: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
    let mut doc_lengths: BTreeMap<String, usize> = BTreeMap::new();
    for chunk in corpus.chunks() {
        let tokens = tokenize(&chunk.text);
        doc_lengths.insert(chunk.chunk_id.clone(), tokens.len());
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push((chunk.chunk_id.clone(), count));
        }
    }
    let n_docs = doc_lengths.len();
    let avg_doc_len = doc_lengths.values().sum::<usize>() as f64 / n_docs as f64;
    Ok(SparseIndex {
        postings,
        doc_lengths,
        avg_doc_len,
        n_docs,
        params,
    })
}

/// Okapi BM25 with the non-negative Lucene-style IDF:
/// `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`.
pub fn bm25_search(index: &SparseIndex, query: &str, top_k: usize) -> Vec<ScoredHit> {
    assert!(top_k >= 1, "top_k must be >= 1");
    let terms = tokenize(query);
    if terms.is_empty() {
        return Vec::new();
    }
    let n = index.n_docs as f64;
    let Bm25Params { k1, b } = index.params;
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for term in &terms {
        let Some(postings) = index.postings.get(term) else {
            continue;
        };
        let df = postings.len() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        for (chunk_ref, tf) in postings {
            let len = index.doc_lengths[chunk_ref] as f64;
            let tf = *tf as f64;
            let norm = tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / index.avg_doc_len));
            *scores.entry(chunk_ref.as_str()).or_default() += idf * norm;
        }
    }
    rank_hits(
        scores.into_iter().map(|(r, s)| (r.to_string(), s)).collect(),
        top_k,
    )
}
