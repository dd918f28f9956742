//! Embedding interface and an exact cosine-similarity vector index.
//!
//! The default [`HashEmbedder`] is a deterministic, dependency-free stand-in
//! for a neural embedding model: signed feature hashing over character
//! trigrams, L2-normalized. A [`RemoteEmbedder`] talks to any
//! OpenAI-compatible `/embeddings` endpoint.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ChunkedCorpus;
use crate::sparse::{rank_hits, IndexError, ScoredHit};

pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, IndexError>;
}

/// FNV-1a, fixed so vectors are stable across processes and builds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Signed character-trigram feature hashing with L2 normalization. Empty or
/// featureless text maps to the all-zeros vector, which callers must treat as
/// carrying no information.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "dim must be >= 1");
        HashEmbedder { dim }
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, IndexError> {
        let mut v = vec![0.0f64; self.dim];
        let normalized = text.to_lowercase();
        let chars: Vec<char> = normalized.chars().collect();
        for window in chars.windows(3) {
            let gram: String = window.iter().collect();
            let h = fnv1a(gram.as_bytes());
            let slot = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }
}

/// Embedder backed by an OpenAI-compatible `POST {base_url}/embeddings`.
pub struct RemoteEmbedder {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub dim: usize,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str, api_key: Option<&str>, model: &str, dim: usize) -> Self {
        RemoteEmbedder {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.map(str::to_string),
            model: model.to_string(),
            dim,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, IndexError> {
        let url = format!("{}/embeddings", self.base_url);
        let mut req = self.client.post(&url).json(&EmbeddingRequest {
            model: &self.model,
            input: vec![text],
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| IndexError::Corrupt(format!("embeddings request failed: {e}")))?;
        let body: EmbeddingResponse = resp
            .error_for_status()
            .map_err(|e| IndexError::Corrupt(format!("embeddings endpoint error: {e}")))?
            .json()
            .map_err(|e| IndexError::Corrupt(format!("bad embeddings response: {e}")))?;
        let v = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| IndexError::Corrupt("empty embeddings response".into()))?
            .embedding;
        if v.len() != self.dim {
            return Err(IndexError::DimMismatch {
                index: self.dim,
                embedder: v.len(),
            });
        }
        Ok(v)
    }
}

/// Exact (linear-scan) cosine-similarity index over unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    vectors: BTreeMap<String, Vec<f64>>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct DenseHeader {
    dim: usize,
    count: usize,
}

impl DenseIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, chunk_ref: &str) -> Option<&[f64]> {
        self.vectors.get(chunk_ref).map(Vec::as_slice)
    }

    /// `index.dense.bin`: one JSON header line, then per vector a
    /// length-prefixed chunk ref and `dim` little-endian f64 values.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(
            &mut w,
            &DenseHeader {
                dim: self.dim,
                count: self.vectors.len(),
            },
        )?;
        w.write_all(b"\n")?;
        for (chunk_ref, vec) in &self.vectors {
            let ref_bytes = chunk_ref.as_bytes();
            w.write_all(&(ref_bytes.len() as u32).to_le_bytes())?;
            w.write_all(ref_bytes)?;
            for x in vec {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut header_line = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            r.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            header_line.push(byte[0]);
        }
        let header: DenseHeader = serde_json::from_slice(&header_line)?;
        let mut vectors = BTreeMap::new();
        for _ in 0..header.count {
            let mut len_bytes = [0u8; 4];
            r.read_exact(&mut len_bytes)?;
            let mut ref_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
            r.read_exact(&mut ref_bytes)?;
            let chunk_ref = String::from_utf8(ref_bytes)
                .map_err(|_| IndexError::Corrupt("non-utf8 chunk ref".into()))?;
            let mut vec = Vec::with_capacity(header.dim);
            for _ in 0..header.dim {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                vec.push(f64::from_le_bytes(buf));
            }
            vectors.insert(chunk_ref, vec);
        }
        Ok(DenseIndex {
            vectors,
            dim: header.dim,
        })
    }
}

pub fn build_dense_index(
    corpus: &ChunkedCorpus,
    embedder: &dyn Embedder,
) -> Result<DenseIndex, IndexError> {
    let mut vectors = BTreeMap::new();
    for chunk in corpus.chunks() {
        vectors.insert(chunk.chunk_id.clone(), embedder.embed(&chunk.text)?);
    }
    Ok(DenseIndex {
        vectors,
        dim: embedder.dim(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact top-k by cosine similarity (dot product over unit vectors),
/// descending, lexicographic tie-break.
pub fn dense_search(
    index: &DenseIndex,
    query: &str,
    embedder: &dyn Embedder,
    top_k: usize,
) -> Result<Vec<ScoredHit>, IndexError> {
    if embedder.dim() != index.dim {
        return Err(IndexError::DimMismatch {
            index: index.dim,
            embedder: embedder.dim(),
        });
    }
    let q = embedder.embed(query)?;
    let scored: Vec<(String, f64)> = index
        .vectors
        .iter()
        .map(|(chunk_ref, v)| (chunk_ref.clone(), dot(&q, v)))
        .collect();
    Ok(rank_hits(scored, top_k))
}
