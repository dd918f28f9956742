//! Corpus ingestion: sentence-based chunking, QA collection loading,
//! persistence, and category-profile sampling for synthetic QA collections.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate doc_id: {0}")]
    DuplicateDocId(String),
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("category '{0}' has invalid probabilities (must be > 0 and sum to 1)")]
    InvalidProfile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// A raw input document before chunking.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// A sentence-bounded fragment of a document, the unit of retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub token_count: usize,
}

/// A question/answer pair with optional category labels, as emitted by
/// synthetic QA generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    #[serde(rename = "answer")]
    pub reference_answer: String,
    #[serde(default)]
    pub categories: BTreeMap<String, String>,
    #[serde(rename = "document_ids", default, skip_serializing_if = "Option::is_none")]
    pub source_doc_ids: Option<Vec<String>>,
}

/// An immutable chunked corpus. Built once, then safe for concurrent readers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkedCorpus {
    chunks: Vec<Chunk>,
    doc_count: usize,
    max_tokens: usize,
    #[serde(skip)]
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub chunk_count: usize,
    pub avg_chunk_tokens: f64,
    pub max_tokens: usize,
}

impl ChunkedCorpus {
    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn get(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        let total: usize = self.chunks.iter().map(|c| c.token_count).sum();
        CorpusStats {
            doc_count: self.doc_count,
            chunk_count: self.chunks.len(),
            avg_chunk_tokens: if self.chunks.is_empty() {
                0.0
            } else {
                total as f64 / self.chunks.len() as f64
            },
            max_tokens: self.max_tokens,
        }
    }

    fn rebuild_lookup(&mut self) {
        self.by_id = self
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
    }

    /// Persist as a directory with `corpus.meta.json` and `chunks.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        let meta = serde_json::to_string_pretty(&self.stats())?;
        fs::write(dir.join("corpus.meta.json"), meta)?;
        let mut w = BufWriter::new(File::create(dir.join("chunks.jsonl"))?);
        for chunk in &self.chunks {
            serde_json::to_writer(&mut w, chunk)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let meta: CorpusStats =
            serde_json::from_str(&fs::read_to_string(dir.join("corpus.meta.json"))?)?;
        let reader = BufReader::new(File::open(dir.join("chunks.jsonl"))?);
        let mut chunks = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: Chunk =
                serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            chunks.push(chunk);
        }
        let mut corpus = ChunkedCorpus {
            chunks,
            doc_count: meta.doc_count,
            max_tokens: meta.max_tokens,
            by_id: HashMap::new(),
        };
        corpus.rebuild_lookup();
        Ok(corpus)
    }
}

/// Splits text into sentences. A sentence ends after `.`, `!` or `?` followed
/// by whitespace and an uppercase letter, or at end of text. Abbreviations are
/// not special-cased.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if c == '.' || c == '!' || c == '?' {
            // Look ahead: whitespace then uppercase, or end of text.
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            let boundary = j > i + 1 && (j == chars.len() || chars[j].is_uppercase());
            let at_end = i + 1 == chars.len();
            if boundary || at_end {
                let sentence: String = chars[start..=i].iter().collect();
                let trimmed = sentence.trim();
                if !trimmed.is_empty() {
                    sentences.push(trimmed.to_string());
                }
                start = j.max(i + 1);
                i = start;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let trimmed = tail.trim();
        if !trimmed.is_empty() {
            sentences.push(trimmed.to_string());
        }
    }
    sentences
}

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn make_chunk(doc_id: &str, ordinal: usize, words: &[&str]) -> Chunk {
    Chunk {
        chunk_id: format!("{doc_id}#{ordinal}"),
        doc_id: doc_id.to_string(),
        ordinal,
        text: words.join(" "),
        token_count: words.len(),
    }
}

/// Greedy sentence packing: accumulate sentences until the next one would
/// overflow `max_tokens`. A sentence longer than the budget on its own is
/// hard-split on word boundaries. Tokens are whitespace-delimited words.
pub fn chunk_document(doc: &Document, max_tokens: usize) -> Vec<Chunk> {
    assert!(max_tokens >= 1, "max_tokens must be >= 1");
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut ordinal = 0usize;
    let sentences = split_sentences(&doc.text);

    let flush = |current: &mut Vec<&str>, ordinal: &mut usize, chunks: &mut Vec<Chunk>| {
        if !current.is_empty() {
            chunks.push(make_chunk(&doc.doc_id, *ordinal, current));
            *ordinal += 1;
            current.clear();
        }
    };

    for sentence in &sentences {
        let ws = words(sentence);
        if ws.len() > max_tokens {
            flush(&mut current, &mut ordinal, &mut chunks);
            for piece in ws.chunks(max_tokens) {
                chunks.push(make_chunk(&doc.doc_id, ordinal, piece));
                ordinal += 1;
            }
        } else if current.len() + ws.len() > max_tokens {
            flush(&mut current, &mut ordinal, &mut chunks);
            current.extend(ws);
        } else {
            current.extend(ws);
        }
    }
    flush(&mut current, &mut ordinal, &mut chunks);
    chunks
}

/// Builds a corpus from a stream of documents, rejecting duplicate ids.
pub fn ingest_corpus<I>(source: I, max_tokens: usize) -> Result<ChunkedCorpus, CorpusError>
where
    I: IntoIterator<Item = Result<Document, CorpusError>>,
{
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut chunks = Vec::new();
    let mut doc_count = 0usize;
    for doc in source {
        let doc = doc?;
        if seen.insert(doc.doc_id.clone(), ()).is_some() {
            return Err(CorpusError::DuplicateDocId(doc.doc_id));
        }
        chunks.extend(chunk_document(&doc, max_tokens));
        doc_count += 1;
    }
    let mut corpus = ChunkedCorpus {
        chunks,
        doc_count,
        max_tokens,
        by_id: HashMap::new(),
    };
    corpus.rebuild_lookup();
    Ok(corpus)
}

/// Reads a JSON-lines document file (`{"id": ..., "text": ..., "metadata": {...}}`).
pub fn read_documents_jsonl(
    path: &Path,
) -> Result<impl Iterator<Item = Result<Document, CorpusError>>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader.lines().enumerate().map(|(i, line)| {
        let line = line?;
        serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })
    }))
}

pub fn ingest_corpus_file(path: &Path, max_tokens: usize) -> Result<ChunkedCorpus, CorpusError> {
    ingest_corpus(read_documents_jsonl(path)?, max_tokens)
}

/// Loads a QA collection from a JSON-lines file. Missing `question`/`answer`
/// fields are reported with their line number.
pub fn load_qa_collection(path: &Path) -> Result<Vec<QAPair>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: QAPair =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        if pair.question.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: i + 1,
                message: "empty `question` field".to_string(),
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// One categorical axis of a question-generation profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileCategory {
    pub name: String,
    pub values: Vec<ProfileValue>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileValue {
    pub value: String,
    pub probability: f64,
}

/// A category profile: independent categorical distributions used to sample
/// question characteristics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryProfileConfig {
    pub categories: Vec<ProfileCategory>,
}

impl CategoryProfileConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for cat in &self.categories {
            if cat.values.is_empty() || cat.values.iter().any(|v| v.probability <= 0.0) {
                return Err(CorpusError::InvalidProfile(cat.name.clone()));
            }
            let sum: f64 = cat.values.iter().map(|v| v.probability).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(CorpusError::InvalidProfile(cat.name.clone()));
            }
        }
        Ok(())
    }
}

/// Samples one value per category, independently, deterministically in
/// `(config, seed)`.
pub fn sample_category_profile(
    config: &CategoryProfileConfig,
    seed: u64,
) -> Result<BTreeMap<String, String>, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for cat in &config.categories {
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = &cat.values[cat.values.len() - 1].value;
        for v in &cat.values {
            acc += v.probability;
            if draw < acc {
                chosen = &v.value;
                break;
            }
        }
        out.insert(cat.name.clone(), chosen.clone());
    }
    Ok(out)
}

/// The default synthetic-collection profile: one user category and five
/// question categories.
pub fn default_category_profile() -> CategoryProfileConfig {
    fn cat(name: &str, values: &[(&str, f64)]) -> ProfileCategory {
        ProfileCategory {
            name: name.to_string(),
            values: values
                .iter()
                .map(|(v, p)| ProfileValue {
                    value: v.to_string(),
                    probability: *p,
                })
                .collect(),
        }
    }
    CategoryProfileConfig {
        categories: vec![
            cat("Expertise", &[("Expert", 0.5), ("Novice", 0.5)]),
            cat("Factuality", &[("Factoid", 0.5), ("Open-ended", 0.5)]),
            cat("Premise", &[("Direct", 0.5), ("With-premise", 0.5)]),
            cat(
                "Phrasing",
                &[
                    ("concise-and-natural", 0.25),
                    ("verbose-and-natural", 0.25),
                    ("short-search-query", 0.25),
                    ("long-search-query", 0.25),
                ],
            ),
            cat(
                "Linguistic variation",
                &[("similar-to-document", 0.5), ("distant-from-document", 0.5)],
            ),
            cat(
                "multi-doc",
                &[
                    ("single-doc", 0.4),
                    ("comparison", 0.2),
                    ("multi-aspect", 0.3),
                    ("three-doc", 0.1),
                ],
            ),
        ],
    }
}
