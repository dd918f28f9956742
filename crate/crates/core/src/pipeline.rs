//! The configurable combined RAG system: one value per configuration axis,
//! orchestrating augment -> retrieve -> rerank -> generate per question, and
//! emitting replayable run records.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{assemble_context, generate_answer, is_abstention, AssembledContext};
use crate::augment::{AugmentStrategy, PromptStyle, QueryAugmenter, QueryBundle};
use crate::corpus::{ChunkedCorpus, QAPair};
use crate::gateway::ChatGateway;
use crate::prompts::PromptRegistry;
use crate::retrieval::{
    merge_across_queries, FusedRanking, Reranker, RetrievalError, RetrievalMode, Retriever,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One point in the configuration space. Unspecified fields deserialize to
/// the defaults, so a config file only needs the axes it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub answer_prompt_style: PromptStyle,
    pub augmentation: AugmentStrategy,
    pub variant_prompt_style: PromptStyle,
    pub n_variants: usize,
    pub retrieval_mode: RetrievalMode,
    pub use_reranker: bool,
    pub rerank_threshold: f64,
    pub docs_retrieved: usize,
    pub context_word_limit: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            answer_prompt_style: PromptStyle::Naive,
            augmentation: AugmentStrategy::None,
            variant_prompt_style: PromptStyle::Naive,
            n_variants: 8,
            retrieval_mode: RetrievalMode::Hybrid,
            use_reranker: true,
            rerank_threshold: 0.5,
            docs_retrieved: 20,
            context_word_limit: 10_000,
        }
    }
}

impl PipelineConfig {
    /// Deterministic serialization of all axes, sorted by key.
    pub fn config_id(&self) -> String {
        format!(
            "answer_prompt={},augmentation={},context_word_limit={},docs_retrieved={},\
             n_variants={},rerank_threshold={},retrieval={},use_reranker={},variant_prompt={}",
            self.answer_prompt_style,
            self.augmentation,
            self.context_word_limit,
            self.docs_retrieved,
            self.n_variants,
            self.rerank_threshold,
            self.retrieval_mode,
            self.use_reranker,
            self.variant_prompt_style,
        )
    }
}

/// The submitted-run configuration: hypothetical answer generation, hybrid
/// retrieval, pointwise reranking at 0.5, the naive answer prompt, and a 10k
/// context budget.
pub fn g_rag_preset() -> PipelineConfig {
    PipelineConfig {
        answer_prompt_style: PromptStyle::Naive,
        augmentation: AugmentStrategy::Hypothetical,
        variant_prompt_style: PromptStyle::Naive,
        n_variants: 8,
        retrieval_mode: RetrievalMode::Hybrid,
        use_reranker: true,
        rerank_threshold: 0.5,
        docs_retrieved: 20,
        context_word_limit: 10_000,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankTraceEntry {
    pub chunk_ref: String,
    pub yes_likelihood: f64,
    pub kept: bool,
}

/// The full per-question trace: enough to re-render the generator prompt and
/// audit every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub question_id: String,
    pub config_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_bundle: Option<QueryBundle>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_query_hits: Vec<FusedRanking>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused: Option<FusedRanking>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rerank_scores: Vec<RerankTraceEntry>,
    pub rerank_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<AssembledContext>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub abstained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Stage name -> elapsed milliseconds.
    pub timings_ms: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub config: PipelineConfig,
    pub config_id: String,
    pub records: Vec<RunRecord>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

fn now_unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Everything a pipeline run needs besides its config.
pub struct PipelineContext<'a> {
    pub gateway: &'a dyn ChatGateway,
    pub prompts: &'a PromptRegistry,
    pub corpus: &'a ChunkedCorpus,
    pub retriever: Retriever<'a>,
}

fn question_id(index: usize, qa: &QAPair) -> String {
    // Stable id from position; question text may repeat across a collection.
    format!("q{index:04}")
        + "-"
        + &qa.question
            .chars()
            .filter(|c| c.is_alphanumeric())
            .take(16)
            .collect::<String>()
            .to_lowercase()
}

fn process_question(
    config: &PipelineConfig,
    ctx: &PipelineContext<'_>,
    record: &mut RunRecord,
) -> Result<(), RetrievalError> {
    let augmenter = QueryAugmenter::new(ctx.gateway, ctx.prompts);

    let t = Instant::now();
    let bundle = augmenter
        .augment(
            &record.question,
            config.augmentation,
            config.n_variants,
            config.variant_prompt_style,
        )
        .map_err(|e| RetrievalError::Gateway(crate::gateway::GatewayError::BadResponse(e.to_string())))?;
    record.timings_ms.insert("augment".into(), t.elapsed().as_millis() as u64);
    record.warnings.extend(bundle.warnings.iter().cloned());

    let t = Instant::now();
    let mut per_query = Vec::with_capacity(bundle.queries.len());
    for query in &bundle.queries {
        per_query.push(ctx.retriever.retrieve_for_query(
            &query.text,
            config.retrieval_mode,
            config.docs_retrieved,
        )?);
    }
    let fused = merge_across_queries(&per_query, config.docs_retrieved, ctx.retriever.rrf_k);
    record.timings_ms.insert("retrieve".into(), t.elapsed().as_millis() as u64);
    record.query_bundle = Some(bundle);
    record.per_query_hits = per_query;

    let t = Instant::now();
    let kept_docs: Vec<(String, String)> = if config.use_reranker {
        let reranker = Reranker::new(ctx.gateway, ctx.prompts);
        let outcome = reranker.rerank_filter(
            &record.question,
            &fused,
            |chunk_ref| {
                ctx.corpus
                    .get(chunk_ref)
                    .map(|c| c.text.clone())
                    .unwrap_or_default()
            },
            config.rerank_threshold,
        )?;
        record.rerank_scores = outcome
            .docs
            .iter()
            .map(|d| RerankTraceEntry {
                chunk_ref: d.chunk_ref.clone(),
                yes_likelihood: d.yes_likelihood,
                kept: d.kept,
            })
            .collect();
        record.rerank_fallback = outcome.fallback_used;
        record.warnings.extend(outcome.warnings);
        outcome
            .docs
            .iter()
            .filter(|d| d.kept)
            .map(|d| {
                let text = ctx
                    .corpus
                    .get(&d.chunk_ref)
                    .map(|c| c.text.clone())
                    .unwrap_or_default();
                (d.chunk_ref.clone(), text)
            })
            .collect()
    } else {
        fused
            .hits
            .iter()
            .map(|h| {
                let text = ctx
                    .corpus
                    .get(&h.chunk_ref)
                    .map(|c| c.text.clone())
                    .unwrap_or_default();
                (h.chunk_ref.clone(), text)
            })
            .collect()
    };
    record.timings_ms.insert("rerank".into(), t.elapsed().as_millis() as u64);
    record.fused = Some(fused);

    let t = Instant::now();
    let context = assemble_context(&kept_docs, config.context_word_limit);
    let answer = generate_answer(
        ctx.gateway,
        ctx.prompts,
        &record.question,
        &context,
        config.answer_prompt_style,
    )?;
    record.timings_ms.insert("generate".into(), t.elapsed().as_millis() as u64);
    record.abstained = is_abstention(&answer);
    record.context = Some(context);
    record.answer = Some(answer);
    Ok(())
}

/// Runs every question through all stages. Per-question failures are captured
/// in the record's `error` field without aborting the run; a missing index
/// for the configured retrieval mode fails immediately.
pub fn run_pipeline(
    config: &PipelineConfig,
    questions: &[QAPair],
    ctx: &PipelineContext<'_>,
) -> Result<RunResult, PipelineError> {
    match config.retrieval_mode {
        RetrievalMode::Sparse if ctx.retriever.sparse.is_none() => {
            return Err(RetrievalError::MissingIndex("sparse").into());
        }
        RetrievalMode::Dense if ctx.retriever.dense.is_none() => {
            return Err(RetrievalError::MissingIndex("dense").into());
        }
        RetrievalMode::Hybrid
            if ctx.retriever.sparse.is_none() || ctx.retriever.dense.is_none() =>
        {
            return Err(RetrievalError::MissingIndex(
                if ctx.retriever.sparse.is_none() { "sparse" } else { "dense" },
            )
            .into());
        }
        _ => {}
    }

    let config_id = config.config_id();
    let started_unix_ms = now_unix_ms();
    let mut records = Vec::with_capacity(questions.len());
    for (i, qa) in questions.iter().enumerate() {
        let mut record = RunRecord {
            question_id: question_id(i, qa),
            config_id: config_id.clone(),
            question: qa.question.clone(),
            query_bundle: None,
            per_query_hits: Vec::new(),
            fused: None,
            rerank_scores: Vec::new(),
            rerank_fallback: false,
            context: None,
            answer: None,
            abstained: false,
            error: None,
            warnings: Vec::new(),
            timings_ms: BTreeMap::new(),
        };
        if let Err(e) = process_question(config, ctx, &mut record) {
            record.error = Some(e.to_string());
        }
        records.push(record);
    }
    Ok(RunResult {
        config: config.clone(),
        config_id,
        records,
        started_unix_ms,
        finished_unix_ms: now_unix_ms(),
    })
}

impl RunResult {
    /// Persists one record per line to `<dir>/run.jsonl` plus a
    /// `manifest.json` with the config and timestamps.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        let manifest = serde_json::json!({
            "config_id": self.config_id,
            "config": self.config,
            "n_questions": self.records.len(),
            "started_unix_ms": self.started_unix_ms,
            "finished_unix_ms": self.finished_unix_ms,
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        let mut w = BufWriter::new(File::create(dir.join("run.jsonl"))?);
        for record in &self.records {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let config: PipelineConfig = serde_json::from_value(manifest["config"].clone())?;
        let mut records = Vec::new();
        for line in BufReader::new(File::open(dir.join("run.jsonl"))?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(RunResult {
            config_id: config.config_id(),
            config,
            records,
            started_unix_ms: manifest["started_unix_ms"].as_u64().unwrap_or(0),
            finished_unix_ms: manifest["finished_unix_ms"].as_u64().unwrap_or(0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_corpus, Document};
    use crate::dense::{build_dense_index, HashEmbedder};
    use crate::gateway::StubGateway;
    use crate::sparse::{build_sparse_index, Bm25Params};

    fn toy_corpus() -> ChunkedCorpus {
        ingest_corpus(
            [
                ("eiffel", "The Eiffel Tower is 330 metres tall. It stands in Paris."),
                ("fuji", "Mount Fuji is 3776 metres tall. It stands in Japan."),
                ("nile", "The Nile is the longest river in Africa."),
            ]
            .iter()
            .map(|(id, text)| {
                Ok(Document {
                    doc_id: id.to_string(),
                    text: text.to_string(),
                    metadata: Default::default(),
                })
            }),
            512,
        )
        .unwrap()
    }

    fn qa(question: &str, answer: &str) -> QAPair {
        QAPair {
            question: question.to_string(),
            reference_answer: answer.to_string(),
            categories: Default::default(),
            source_doc_ids: None,
        }
    }

    fn stub_rules() -> Vec<crate::gateway::StubRule> {
        vec![
            StubGateway::logprob_rule(
                "Does this document contain",
                "Yes",
                &[("Yes", -0.1), ("No", -2.4)],
            ),
            StubGateway::rule("Documents:", "The Eiffel Tower is 330 metres tall."),
            StubGateway::rule("hypothetical answer", "It is 330 metres tall."),
            StubGateway::rule("tall", "how tall eiffel\nheight of eiffel tower"),
        ]
    }

    #[test]
    fn config_id_is_stable_and_sorted() {
        let id = g_rag_preset().config_id();
        assert_eq!(id, g_rag_preset().config_id());
        assert!(id.starts_with("answer_prompt=naive,augmentation=hypothetical"));
        assert!(id.contains("retrieval=hybrid"));
        assert!(id.contains("use_reranker=true"));
    }

    #[test]
    fn g_rag_preset_axes() {
        let preset = g_rag_preset();
        assert_eq!(preset.augmentation, AugmentStrategy::Hypothetical);
        assert_eq!(preset.retrieval_mode, RetrievalMode::Hybrid);
        assert!(preset.use_reranker);
        assert_eq!(preset.rerank_threshold, 0.5);
        assert_eq!(preset.answer_prompt_style, PromptStyle::Naive);
        assert_eq!(preset.context_word_limit, 10_000);
        assert_eq!(preset.n_variants, 8);
    }

    #[test]
    fn none_augmentation_produces_single_query_records() {
        let corpus = toy_corpus();
        let sparse = build_sparse_index(&corpus, Bm25Params::default()).unwrap();
        let embedder = HashEmbedder::new(64);
        let dense = build_dense_index(&corpus, &embedder).unwrap();
        let gw = StubGateway::new(stub_rules());
        let prompts = PromptRegistry::default();
        let ctx = PipelineContext {
            gateway: &gw,
            prompts: &prompts,
            corpus: &corpus,
            retriever: Retriever::new(Some(&sparse), Some((&dense, &embedder))),
        };
        let config = PipelineConfig {
            augmentation: AugmentStrategy::None,
            ..g_rag_preset()
        };
        let result = run_pipeline(
            &config,
            &[qa("How tall is the Eiffel Tower?", "330m"), qa("Where is Mount Fuji?", "Japan")],
            &ctx,
        )
        .unwrap();
        assert_eq!(result.records.len(), 2);
        for record in &result.records {
            assert!(record.error.is_none(), "{:?}", record.error);
            assert_eq!(record.query_bundle.as_ref().unwrap().queries.len(), 1);
            assert!(record.answer.is_some());
        }
    }

    #[test]
    fn g_rag_run_traces_all_stages_and_is_deterministic() {
        let corpus = toy_corpus();
        let sparse = build_sparse_index(&corpus, Bm25Params::default()).unwrap();
        let embedder = HashEmbedder::new(64);
        let dense = build_dense_index(&corpus, &embedder).unwrap();
        let prompts = PromptRegistry::default();
        let run = || {
            let gw = StubGateway::new(stub_rules());
            let ctx = PipelineContext {
                gateway: &gw,
                prompts: &prompts,
                corpus: &corpus,
                retriever: Retriever::new(Some(&sparse), Some((&dense, &embedder))),
            };
            run_pipeline(&g_rag_preset(), &[qa("How tall is the Eiffel Tower?", "330m")], &ctx)
                .unwrap()
        };
        let a = run();
        let b = run();
        let record = &a.records[0];
        assert!(record.error.is_none());
        let bundle = record.query_bundle.as_ref().unwrap();
        assert_eq!(bundle.queries.len(), 2); // original + hypothetical
        assert!(!record.rerank_scores.is_empty());
        assert!(record.context.is_some());
        assert_eq!(record.answer.as_deref(), Some("The Eiffel Tower is 330 metres tall."));
        // Determinism modulo timestamps: strip timings (they are wall-clock).
        let strip = |r: &RunRecord| {
            let mut r = r.clone();
            r.timings_ms.clear();
            serde_json::to_string(&r).unwrap()
        };
        assert_eq!(strip(&a.records[0]), strip(&b.records[0]));
    }

    #[test]
    fn per_question_failures_do_not_abort_the_run() {
        let corpus = toy_corpus();
        let sparse = build_sparse_index(&corpus, Bm25Params::default()).unwrap();
        let prompts = PromptRegistry::default();
        // Answer rule present, no hypothetical rule: augmentation fails.
        let gw = StubGateway::new(vec![StubGateway::rule("Documents:", "whatever")]);
        let ctx = PipelineContext {
            gateway: &gw,
            prompts: &prompts,
            corpus: &corpus,
            retriever: Retriever::new(Some(&sparse), None),
        };
        let config = PipelineConfig {
            augmentation: AugmentStrategy::Hypothetical,
            retrieval_mode: RetrievalMode::Sparse,
            use_reranker: false,
            ..PipelineConfig::default()
        };
        let result = run_pipeline(&config, &[qa("q1", "a"), qa("q2", "a")], &ctx).unwrap();
        assert_eq!(result.records.len(), 2);
        assert!(result.records.iter().all(|r| r.error.is_some()));
    }

    #[test]
    fn missing_index_fails_before_processing() {
        let corpus = toy_corpus();
        let prompts = PromptRegistry::default();
        let gw = StubGateway::new(vec![]);
        let ctx = PipelineContext {
            gateway: &gw,
            prompts: &prompts,
            corpus: &corpus,
            retriever: Retriever::new(None, None),
        };
        assert!(run_pipeline(&g_rag_preset(), &[qa("q", "a")], &ctx).is_err());
    }

    #[test]
    fn disabling_reranker_passes_fused_list_to_context() {
        let corpus = toy_corpus();
        let sparse = build_sparse_index(&corpus, Bm25Params::default()).unwrap();
        let prompts = PromptRegistry::default();
        let gw = StubGateway::new(vec![StubGateway::rule("Documents:", "ans")]);
        let ctx = PipelineContext {
            gateway: &gw,
            prompts: &prompts,
            corpus: &corpus,
            retriever: Retriever::new(Some(&sparse), None),
        };
        let config = PipelineConfig {
            augmentation: AugmentStrategy::None,
            retrieval_mode: RetrievalMode::Sparse,
            use_reranker: false,
            ..PipelineConfig::default()
        };
        let result =
            run_pipeline(&config, &[qa("How tall is the Eiffel Tower?", "330m")], &ctx).unwrap();
        let record = &result.records[0];
        assert!(record.rerank_scores.is_empty());
        let fused_refs: Vec<&str> = record.fused.as_ref().unwrap().chunk_refs();
        let ctx_refs: Vec<&str> = record
            .context
            .as_ref()
            .unwrap()
            .included_chunk_refs
            .iter()
            .map(String::as_str)
            .collect();
        assert_eq!(ctx_refs, fused_refs);
    }

    #[test]
    fn run_result_roundtrips_through_disk() {
        let corpus = toy_corpus();
        let sparse = build_sparse_index(&corpus, Bm25Params::default()).unwrap();
        let prompts = PromptRegistry::default();
        let gw = StubGateway::new(vec![StubGateway::rule("Documents:", "ans")]);
        let ctx = PipelineContext {
            gateway: &gw,
            prompts: &prompts,
            corpus: &corpus,
            retriever: Retriever::new(Some(&sparse), None),
        };
        let config = PipelineConfig {
            augmentation: AugmentStrategy::None,
            retrieval_mode: RetrievalMode::Sparse,
            use_reranker: false,
            ..PipelineConfig::default()
        };
        let result = run_pipeline(&config, &[qa("eiffel tower", "330m")], &ctx).unwrap();
        let dir = tempfile::tempdir().unwrap();
        result.save(dir.path()).unwrap();
        let loaded = RunResult::load(dir.path()).unwrap();
        assert_eq!(loaded.config_id, result.config_id);
        assert_eq!(loaded.records, result.records);
    }
}
