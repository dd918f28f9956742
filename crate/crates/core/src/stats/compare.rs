//! Per-question pairwise comparison of two evaluated runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::EvalReport;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("reports cover different question sets (A has {a} questions, B has {b}; first difference: '{first_diff}')")]
    QuestionSetMismatch {
        a: usize,
        b: usize,
        first_diff: String,
    },
    #[error("reports contain no questions")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Relevance,
    Faithfulness,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Relevance => "relevance",
            Metric::Faithfulness => "faithfulness",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relevance" => Ok(Metric::Relevance),
            "faithfulness" => Ok(Metric::Faithfulness),
            other => Err(format!("unknown metric '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub metric: Metric,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub n_questions: usize,
}

/// Strict per-question comparison of one metric across two reports covering
/// the same questions. A missing score loses to any present score; two
/// missing scores tie.
pub fn pairwise_compare(
    a: &EvalReport,
    b: &EvalReport,
    metric: Metric,
) -> Result<ComparisonReport, CompareError> {
    let ids_a: Vec<&String> = a.per_question.keys().collect();
    let ids_b: Vec<&String> = b.per_question.keys().collect();
    if ids_a != ids_b {
        let first_diff = ids_a
            .iter()
            .zip(&ids_b)
            .find(|(x, y)| x != y)
            .map(|(x, _)| (*x).clone())
            .or_else(|| ids_a.get(ids_b.len()).map(|s| (*s).clone()))
            .or_else(|| ids_b.get(ids_a.len()).map(|s| (*s).clone()))
            .unwrap_or_default();
        return Err(CompareError::QuestionSetMismatch {
            a: ids_a.len(),
            b: ids_b.len(),
            first_diff,
        });
    }
    if ids_a.is_empty() {
        return Err(CompareError::Empty);
    }
    let score_of = |report: &EvalReport, id: &str| match metric {
        Metric::Relevance => report.per_question[id].relevance,
        Metric::Faithfulness => report.per_question[id].faithfulness,
    };
    let mut report = ComparisonReport {
        metric,
        wins_a: 0,
        wins_b: 0,
        ties: 0,
        n_questions: ids_a.len(),
    };
    for id in ids_a {
        // Option's ordering puts None below any Some, which is the intended
        // "a failed judgement loses" rule.
        match score_of(a, id).cmp(&score_of(b, id)) {
            std::cmp::Ordering::Greater => report.wins_a += 1,
            std::cmp::Ordering::Less => report.wins_b += 1,
            std::cmp::Ordering::Equal => report.ties += 1,
        }
    }
    debug_assert_eq!(report.wins_a + report.wins_b + report.ties, report.n_questions);
    Ok(report)
}
