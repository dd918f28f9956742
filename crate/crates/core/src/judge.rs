//! LLM-as-judge evaluation: independent relevance and faithfulness calls per
//! question, JSON extraction from the judge's reply, aggregate reporting, and
//! tricky-question mining.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatGateway, ChatRequest, GatewayError};
use crate::pipeline::RunResult;
use crate::prompts::{self, PromptError, PromptRegistry};

/// Total attempts per judge call: one ask plus up to two re-asks.
pub const JUDGE_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("run contains no records")]
    EmptyRun,
    #[error("run has {run} records but QA collection has {qa} questions")]
    QuestionCountMismatch { run: usize, qa: usize },
    #[error("question mismatch at index {index}: run '{run}' vs QA '{qa}'")]
    QuestionMismatch {
        index: usize,
        run: String,
        qa: String,
    },
    #[error("judge reply unparseable after {attempts} attempts: {message}")]
    Unparseable { attempts: usize, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Scores for one question. A metric is absent when its judge call failed
/// after retries; the failure reason lands in `errors`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub relevance: Option<i64>,
    pub faithfulness: Option<i64>,
    #[serde(default)]
    pub relevance_notes: String,
    #[serde(default)]
    pub faithfulness_notes: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_id: String,
    pub per_question: BTreeMap<String, JudgeScore>,
    /// Arithmetic mean of the present relevance scores.
    pub avg_relevance: f64,
    /// Arithmetic mean of the present faithfulness scores.
    pub avg_faithfulness: f64,
    /// Score value -> number of questions with that relevance score.
    pub relevance_counts: BTreeMap<i64, usize>,
    /// Score value -> number of questions with that faithfulness score.
    pub faithfulness_counts: BTreeMap<i64, usize>,
}

pub const RELEVANCE_SCALE: [i64; 4] = [-1, 0, 1, 2];
pub const FAITHFULNESS_SCALE: [i64; 3] = [-1, 0, 1];

/// Pulls the JSON object out of a judge reply: the first fenced code block if
/// one exists (with or without a `json` tag), otherwise the whole reply.
pub fn extract_json_block(text: &str) -> Result<serde_json::Value, serde_json::Error> {
    let candidate = fenced_block(text).unwrap_or(text);
    serde_json::from_str(candidate.trim())
}

fn fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after_fence = &text[start + 3..];
    // Skip an optional language tag on the fence line.
    let body_start = after_fence.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after_fence[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

fn parse_score_reply(
    raw: &str,
    score_field: &str,
    scale: &[i64],
) -> Result<(i64, String), String> {
    let value = extract_json_block(raw).map_err(|e| format!("invalid JSON: {e}"))?;
    let score = value
        .get(score_field)
        .and_then(|v| v.as_i64())
        .ok_or_else(|| format!("missing integer field '{score_field}'"))?;
    if !scale.contains(&score) {
        return Err(format!("{score_field}={score} outside scale {scale:?}"));
    }
    let notes = value
        .get("evaluation_notes")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    Ok((score, notes))
}

fn judge_metric(
    gateway: &dyn ChatGateway,
    prompts: &PromptRegistry,
    template: &str,
    score_field: &str,
    scale: &[i64],
    question: &str,
    answer: &str,
    reference: &str,
    docs: &str,
) -> Result<(i64, String), JudgeError> {
    let (system, user) = prompts.render(
        template,
        &[
            ("question", question),
            ("answer", answer),
            ("reference_answer", reference),
            ("documents", docs),
        ],
    )?;
    let request = ChatRequest::new(&system, &user);
    let mut last_error = String::new();
    for _ in 0..JUDGE_ATTEMPTS {
        let response = gateway.complete(&request)?;
        match parse_score_reply(&response.text, score_field, scale) {
            Ok(parsed) => return Ok(parsed),
            Err(e) => last_error = e,
        }
    }
    Err(JudgeError::Unparseable {
        attempts: JUDGE_ATTEMPTS,
        message: last_error,
    })
}

/// Scores answer correctness on the {-1, 0, 1, 2} scale.
pub fn judge_relevance(
    gateway: &dyn ChatGateway,
    prompts: &PromptRegistry,
    question: &str,
    answer: &str,
    reference: &str,
    docs: &str,
) -> Result<(i64, String), JudgeError> {
    judge_metric(
        gateway,
        prompts,
        prompts::JUDGE_RELEVANCE,
        "relevance_score",
        &RELEVANCE_SCALE,
        question,
        answer,
        reference,
        docs,
    )
}

/// Scores grounding in the retrieved passages on the {-1, 0, 1} scale, as an
/// independent gateway call.
pub fn judge_faithfulness(
    gateway: &dyn ChatGateway,
    prompts: &PromptRegistry,
    question: &str,
    answer: &str,
    reference: &str,
    docs: &str,
) -> Result<(i64, String), JudgeError> {
    judge_metric(
        gateway,
        prompts,
        prompts::JUDGE_FAITHFULNESS,
        "faithfulness_score",
        &FAITHFULNESS_SCALE,
        question,
        answer,
        reference,
        docs,
    )
}

fn mean_of(scores: impl Iterator<Item = i64>) -> f64 {
    let values: Vec<i64> = scores.collect();
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<i64>() as f64 / values.len() as f64
    }
}

impl EvalReport {
    /// Rebuilds averages and count histograms from `per_question`.
    pub fn recompute_aggregates(&mut self) {
        self.avg_relevance = mean_of(self.per_question.values().filter_map(|s| s.relevance));
        self.avg_faithfulness =
            mean_of(self.per_question.values().filter_map(|s| s.faithfulness));
        self.relevance_counts.clear();
        self.faithfulness_counts.clear();
        for score in self.per_question.values() {
            if let Some(r) = score.relevance {
                *self.relevance_counts.entry(r).or_insert(0) += 1;
            }
            if let Some(f) = score.faithfulness {
                *self.faithfulness_counts.entry(f).or_insert(0) += 1;
            }
        }
    }

    pub fn save(&self, evals_dir: &Path) -> Result<std::path::PathBuf, JudgeError> {
        fs::create_dir_all(evals_dir)?;
        let path = evals_dir.join(format!("{}.json", sanitize_file_stem(&self.config_id)));
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, JudgeError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Config ids contain `=` and `,`; keep filenames portable.
pub fn sanitize_file_stem(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Judges every record of a run against its QA pair. Abstentions are judged
/// like any other answer (the rubric maps them to 0); per-question judge
/// failures are recorded in that question's `errors`, not raised.
pub fn evaluate_run(
    gateway: &dyn ChatGateway,
    prompts: &PromptRegistry,
    run: &RunResult,
    qa: &[crate::corpus::QAPair],
) -> Result<EvalReport, JudgeError> {
    if run.records.is_empty() {
        return Err(JudgeError::EmptyRun);
    }
    if run.records.len() != qa.len() {
        return Err(JudgeError::QuestionCountMismatch {
            run: run.records.len(),
            qa: qa.len(),
        });
    }
    let mut per_question = BTreeMap::new();
    for (index, (record, pair)) in run.records.iter().zip(qa).enumerate() {
        if record.question != pair.question {
            return Err(JudgeError::QuestionMismatch {
                index,
                run: record.question.clone(),
                qa: pair.question.clone(),
            });
        }
        let mut score = JudgeScore::default();
        if let Some(e) = &record.error {
            score.errors.push(format!("pipeline error: {e}"));
        } else {
            let answer = record.answer.as_deref().unwrap_or_default();
            let docs = record
                .context
                .as_ref()
                .map(|c| c.text.as_str())
                .unwrap_or_default();
            match judge_relevance(gateway, prompts, &pair.question, answer, &pair.reference_answer, docs)
            {
                Ok((value, notes)) => {
                    score.relevance = Some(value);
                    score.relevance_notes = notes;
                }
                Err(e) => score.errors.push(format!("relevance: {e}")),
            }
            match judge_faithfulness(
                gateway,
                prompts,
                &pair.question,
                answer,
                &pair.reference_answer,
                docs,
            ) {
                Ok((value, notes)) => {
                    score.faithfulness = Some(value);
                    score.faithfulness_notes = notes;
                }
                Err(e) => score.errors.push(format!("faithfulness: {e}")),
            }
        }
        per_question.insert(record.question_id.clone(), score);
    }
    let mut report = EvalReport {
        config_id: run.config_id.clone(),
        per_question,
        avg_relevance: 0.0,
        avg_faithfulness: 0.0,
        relevance_counts: BTreeMap::new(),
        faithfulness_counts: BTreeMap::new(),
    };
    report.recompute_aggregates();
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrickySets {
    /// Questions the system got wrong or only partially right: relevance <= 0
    /// or faithfulness <= 0.
    pub tricky: BTreeSet<String>,
    /// Worst-case questions: relevance == -1 and faithfulness == -1. Always a
    /// subset of `tricky`.
    pub challenging: BTreeSet<String>,
}

pub fn flag_tricky(report: &EvalReport) -> TrickySets {
    let mut sets = TrickySets::default();
    for (question_id, score) in &report.per_question {
        let rel_low = score.relevance.is_some_and(|r| r <= 0);
        let faith_low = score.faithfulness.is_some_and(|f| f <= 0);
        if rel_low || faith_low {
            sets.tricky.insert(question_id.clone());
        }
        if score.relevance == Some(-1) && score.faithfulness == Some(-1) {
            sets.challenging.insert(question_id.clone());
        }
    }
    debug_assert!(sets.challenging.is_subset(&sets.tricky));
    sets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::StubGateway;
    use crate::pipeline::{PipelineConfig, RunRecord};

    fn judge_reply(field: &str, score: i64) -> String {
        format!("```json\n{{\"evaluation_notes\": \"ok\", \"{field}\": {score}}}\n```")
    }

    #[test]
    fn fenced_json_reply_parses() {
        let gw = StubGateway::new(vec![StubGateway::rule(
            "relevance (2, 1, 0, or -1)",
            &judge_reply("relevance_score", 2),
        )]);
        let reg = PromptRegistry::default();
        let (score, notes) = judge_relevance(&gw, &reg, "q", "a", "ref", "docs").unwrap();
        assert_eq!(score, 2);
        assert_eq!(notes, "ok");
    }

    #[test]
    fn prose_wrapped_fenced_block_parses() {
        let reply = format!(
            "Sure, here is my evaluation.\n{}\nHope that helps!",
            judge_reply("faithfulness_score", -1)
        );
        let gw = StubGateway::new(vec![StubGateway::rule("faithfulness (1, 0, or -1)", &reply)]);
        let reg = PromptRegistry::default();
        let (score, _) = judge_faithfulness(&gw, &reg, "q", "a", "ref", "docs").unwrap();
        assert_eq!(score, -1);
    }

    #[test]
    fn bare_json_without_fences_parses() {
        let gw = StubGateway::new(vec![StubGateway::rule(
            "relevance (2, 1, 0, or -1)",
            "{\"evaluation_notes\": \"n\", \"relevance_score\": 1}",
        )]);
        let reg = PromptRegistry::default();
        assert_eq!(judge_relevance(&gw, &reg, "q", "a", "r", "d").unwrap().0, 1);
    }

    #[test]
    fn out_of_range_score_retries_then_errors() {
        let gw = StubGateway::new(vec![StubGateway::rule(
            "relevance (2, 1, 0, or -1)",
            &judge_reply("relevance_score", 5),
        )]);
        let reg = PromptRegistry::default();
        let err = judge_relevance(&gw, &reg, "q", "a", "r", "d").unwrap_err();
        assert!(matches!(err, JudgeError::Unparseable { attempts: 3, .. }));
        assert_eq!(gw.call_count(), 3);
    }

    #[test]
    fn garbage_reply_retries_then_errors() {
        let gw = StubGateway::new(vec![StubGateway::rule(
            "faithfulness (1, 0, or -1)",
            "no json here",
        )]);
        let reg = PromptRegistry::default();
        assert!(judge_faithfulness(&gw, &reg, "q", "a", "r", "d").is_err());
        assert_eq!(gw.call_count(), 3);
    }

    #[test]
    fn relevance_and_faithfulness_use_independent_calls() {
        let gw = StubGateway::new(vec![
            StubGateway::rule("relevance (2, 1, 0, or -1)", &judge_reply("relevance_score", 2)),
            StubGateway::rule(
                "faithfulness (1, 0, or -1)",
                &judge_reply("faithfulness_score", 1),
            ),
        ]);
        let reg = PromptRegistry::default();
        judge_relevance(&gw, &reg, "q", "a", "r", "d").unwrap();
        assert_eq!(gw.call_count(), 1);
        judge_faithfulness(&gw, &reg, "q", "a", "r", "d").unwrap();
        assert_eq!(gw.call_count(), 2);
    }

    fn record(question_id: &str, question: &str, answer: &str) -> RunRecord {
        RunRecord {
            question_id: question_id.to_string(),
            config_id: "cfg".to_string(),
            question: question.to_string(),
            query_bundle: None,
            per_query_hits: Vec::new(),
            fused: None,
            rerank_scores: Vec::new(),
            rerank_fallback: false,
            context: Some(crate::answer::AssembledContext {
                text: "ctx".to_string(),
                included_chunk_refs: vec!["a#0".to_string()],
                truncated: false,
                word_count: 1,
            }),
            answer: Some(answer.to_string()),
            abstained: false,
            error: None,
            warnings: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    fn run_of(records: Vec<RunRecord>) -> RunResult {
        RunResult {
            config: PipelineConfig::default(),
            config_id: "cfg".to_string(),
            records,
            started_unix_ms: 0,
            finished_unix_ms: 0,
        }
    }

    fn qa(question: &str) -> crate::corpus::QAPair {
        crate::corpus::QAPair {
            question: question.to_string(),
            reference_answer: "ref".to_string(),
            categories: Default::default(),
            source_doc_ids: None,
        }
    }

    #[test]
    fn evaluate_run_averages_match_hand_arithmetic() {
        // Both metrics' user prompts render the same QUESTION block, so a
        // question-keyed rule answers both calls; make the scripted reply
        // carry both fields to stay metric-agnostic.
        let reply = |rel: i64, faith: i64| {
            format!(
                "```json\n{{\"evaluation_notes\": \"ok\", \"relevance_score\": {rel}, \
                 \"faithfulness_score\": {faith}}}\n```"
            )
        };
        let gw = StubGateway::new(vec![
            StubGateway::rule("QUESTION:\nq one\nRESPONSE", &reply(2, 1)),
            StubGateway::rule("QUESTION:\nq two\nRESPONSE", &reply(1, 0)),
        ]);
        let reg = PromptRegistry::default();
        let run = run_of(vec![record("q0", "q one", "a1"), record("q1", "q two", "a2")]);
        let report = evaluate_run(&gw, &reg, &run, &[qa("q one"), qa("q two")]).unwrap();
        assert_eq!(report.avg_relevance, 1.5);
        assert_eq!(report.avg_faithfulness, 0.5);
        assert_eq!(report.relevance_counts, BTreeMap::from([(2, 1), (1, 1)]));
        assert_eq!(report.faithfulness_counts, BTreeMap::from([(1, 1), (0, 1)]));
        // Averages recomputable from per_question.
        let mut copy = report.clone();
        copy.recompute_aggregates();
        assert!((copy.avg_relevance - report.avg_relevance).abs() < 1e-12);
    }

    #[test]
    fn empty_run_is_an_error() {
        let gw = StubGateway::new(vec![]);
        let reg = PromptRegistry::default();
        assert!(matches!(
            evaluate_run(&gw, &reg, &run_of(vec![]), &[]),
            Err(JudgeError::EmptyRun)
        ));
    }

    #[test]
    fn question_mismatch_is_an_error() {
        let gw = StubGateway::new(vec![]);
        let reg = PromptRegistry::default();
        let run = run_of(vec![record("q0", "actual question", "a")]);
        assert!(matches!(
            evaluate_run(&gw, &reg, &run, &[qa("different question")]),
            Err(JudgeError::QuestionMismatch { index: 0, .. })
        ));
        assert!(matches!(
            evaluate_run(&gw, &reg, &run, &[]),
            Err(JudgeError::QuestionCountMismatch { run: 1, qa: 0 })
        ));
    }

    #[test]
    fn judge_failures_are_per_question_not_fatal() {
        // No rules at all: every judge call errors, but the report is built.
        let gw = StubGateway::new(vec![]);
        let reg = PromptRegistry::default();
        let run = run_of(vec![record("q0", "q one", "a")]);
        let report = evaluate_run(&gw, &reg, &run, &[qa("q one")]).unwrap();
        let score = &report.per_question["q0"];
        assert!(score.relevance.is_none());
        assert!(score.faithfulness.is_none());
        assert_eq!(score.errors.len(), 2);
    }

    fn report_with(scores: &[(&str, Option<i64>, Option<i64>)]) -> EvalReport {
        let mut report = EvalReport {
            config_id: "cfg".to_string(),
            per_question: scores
                .iter()
                .map(|(id, rel, faith)| {
                    (
                        id.to_string(),
                        JudgeScore {
                            relevance: *rel,
                            faithfulness: *faith,
                            ..Default::default()
                        },
                    )
                })
                .collect(),
            avg_relevance: 0.0,
            avg_faithfulness: 0.0,
            relevance_counts: BTreeMap::new(),
            faithfulness_counts: BTreeMap::new(),
        };
        report.recompute_aggregates();
        report
    }

    #[test]
    fn all_good_scores_flag_nothing() {
        let sets = flag_tricky(&report_with(&[
            ("a", Some(2), Some(1)),
            ("b", Some(1), Some(1)),
        ]));
        assert!(sets.tricky.is_empty());
        assert!(sets.challenging.is_empty());
    }

    #[test]
    fn worst_case_question_lands_in_both_sets() {
        let sets = flag_tricky(&report_with(&[
            ("a", Some(2), Some(1)),
            ("b", Some(-1), Some(-1)),
        ]));
        assert_eq!(sets.tricky, BTreeSet::from(["b".to_string()]));
        assert_eq!(sets.challenging, BTreeSet::from(["b".to_string()]));
    }

    #[test]
    fn tricky_sets_match_a_brute_force_filter() {
        // Mixed synthetic grid over both scales plus missing values.
        let mut scores = Vec::new();
        let rel_options = [None, Some(-1), Some(0), Some(1), Some(2)];
        let faith_options = [None, Some(-1), Some(0), Some(1)];
        let ids: Vec<String> = (0..rel_options.len() * faith_options.len())
            .map(|i| format!("q{i:02}"))
            .collect();
        let mut i = 0;
        for rel in rel_options {
            for faith in faith_options {
                scores.push((ids[i].clone(), rel, faith));
                i += 1;
            }
        }
        let owned: Vec<(&str, Option<i64>, Option<i64>)> =
            scores.iter().map(|(id, r, f)| (id.as_str(), *r, *f)).collect();
        let report = report_with(&owned);
        let sets = flag_tricky(&report);
        for (id, rel, faith) in &scores {
            let expect_tricky =
                matches!(rel, Some(r) if *r <= 0) || matches!(faith, Some(f) if *f <= 0);
            let expect_challenging = *rel == Some(-1) && *faith == Some(-1);
            assert_eq!(sets.tricky.contains(id), expect_tricky, "{id}");
            assert_eq!(sets.challenging.contains(id), expect_challenging, "{id}");
        }
        assert!(sets.challenging.is_subset(&sets.tricky));
    }

    #[test]
    fn report_roundtrips_through_disk() {
        let report = report_with(&[("a", Some(2), Some(1)), ("b", Some(0), Some(-1))]);
        let dir = tempfile::tempdir().unwrap();
        let path = report.save(dir.path()).unwrap();
        assert!(path.file_name().unwrap().to_str().unwrap().ends_with(".json"));
        let loaded = EvalReport::load(&path).unwrap();
        assert_eq!(loaded, report);
    }

    #[test]
    fn file_stem_sanitization() {
        assert_eq!(sanitize_file_stem("a=b,c=d"), "a_b_c_d");
        assert_eq!(sanitize_file_stem("rerank_threshold=0.5"), "rerank_threshold_0.5");
    }
}
