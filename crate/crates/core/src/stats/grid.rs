//! Grid-of-Points enumeration: a declared configuration space expanded into
//! every axis combination, plus champion ranking over the evaluated grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentStrategy, PromptStyle};
use crate::judge::EvalReport;
use crate::pipeline::PipelineConfig;
use crate::retrieval::RetrievalMode;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("unknown configuration axis '{0}'")]
    UnknownAxis(String),
    #[error("axis '{axis}' rejects value '{value}': {message}")]
    BadValue {
        axis: String,
        value: String,
        message: String,
    },
    #[error("axis '{0}' has no values")]
    EmptyAxis(String),
    #[error("axis '{0}' is both varying and frozen")]
    FrozenOverlap(String),
    #[error("no evaluation reports to rank")]
    NoReports,
}

/// Ordered varying axes plus held-constant axis values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<(String, Vec<String>)>,
    #[serde(default)]
    pub frozen: BTreeMap<String, String>,
}

/// The Table-2-shaped space: augmentation x variant prompt x context limit x
/// retrieval x documents retrieved x answer prompt = 3*2*2*2*2*2 = 96, with
/// the variant count frozen at eight and the pointwise reranker always on.
pub fn table2_grid_spec() -> GridSpec {
    let axis = |name: &str, values: &[&str]| {
        (
            name.to_string(),
            values.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        )
    };
    GridSpec {
        axes: vec![
            axis("augmentation", &["none", "variants", "decomposition"]),
            axis("variant_prompt", &["naive", "advanced"]),
            axis("context_word_limit", &["10000", "15000"]),
            axis("retrieval", &["sparse", "hybrid"]),
            axis("docs_retrieved", &["10", "20"]),
            axis("answer_prompt", &["naive", "medium"]),
        ],
        frozen: BTreeMap::from([
            ("n_variants".to_string(), "8".to_string()),
            ("use_reranker".to_string(), "true".to_string()),
            ("rerank_threshold".to_string(), "0.5".to_string()),
        ]),
    }
}

/// The model fitted to the 96-run grid: six main effects and the eight
/// interactions carried in the component analysis, 18 model DF in total.
pub fn table2_model_terms() -> Vec<Vec<String>> {
    let term = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    vec![
        term(&["augmentation"]),
        term(&["variant_prompt", "retrieval"]),
        term(&["variant_prompt"]),
        term(&["context_word_limit"]),
        term(&["retrieval"]),
        term(&["docs_retrieved", "retrieval"]),
        term(&["answer_prompt"]),
        term(&["context_word_limit", "augmentation"]),
        term(&["context_word_limit", "answer_prompt", "augmentation"]),
        term(&["answer_prompt", "augmentation"]),
        term(&["variant_prompt", "docs_retrieved", "retrieval"]),
        term(&["context_word_limit", "answer_prompt"]),
        term(&["variant_prompt", "docs_retrieved"]),
        term(&["docs_retrieved"]),
    ]
}

fn bad(axis: &str, value: &str, message: impl ToString) -> GridError {
    GridError::BadValue {
        axis: axis.to_string(),
        value: value.to_string(),
        message: message.to_string(),
    }
}

/// Sets one named axis on a config, parsing the string value.
pub fn apply_axis(
    config: &mut PipelineConfig,
    axis: &str,
    value: &str,
) -> Result<(), GridError> {
    match axis {
        "augmentation" => {
            config.augmentation = value
                .parse::<AugmentStrategy>()
                .map_err(|e| bad(axis, value, e))?;
        }
        "variant_prompt" => {
            config.variant_prompt_style =
                value.parse::<PromptStyle>().map_err(|e| bad(axis, value, e))?;
        }
        "answer_prompt" => {
            config.answer_prompt_style =
                value.parse::<PromptStyle>().map_err(|e| bad(axis, value, e))?;
        }
        "retrieval" => {
            config.retrieval_mode =
                value.parse::<RetrievalMode>().map_err(|e| bad(axis, value, e))?;
        }
        "context_word_limit" => {
            config.context_word_limit =
                value.parse::<usize>().map_err(|e| bad(axis, value, e))?;
        }
        "docs_retrieved" => {
            config.docs_retrieved = value.parse::<usize>().map_err(|e| bad(axis, value, e))?;
        }
        "n_variants" => {
            config.n_variants = value.parse::<usize>().map_err(|e| bad(axis, value, e))?;
        }
        "use_reranker" => {
            config.use_reranker = value.parse::<bool>().map_err(|e| bad(axis, value, e))?;
        }
        "rerank_threshold" => {
            config.rerank_threshold = value.parse::<f64>().map_err(|e| bad(axis, value, e))?;
        }
        other => return Err(GridError::UnknownAxis(other.to_string())),
    }
    Ok(())
}

/// Reads one named axis off a config as the string form `apply_axis` accepts.
pub fn axis_value(config: &PipelineConfig, axis: &str) -> Result<String, GridError> {
    Ok(match axis {
        "augmentation" => config.augmentation.to_string(),
        "variant_prompt" => config.variant_prompt_style.to_string(),
        "answer_prompt" => config.answer_prompt_style.to_string(),
        "retrieval" => config.retrieval_mode.to_string(),
        "context_word_limit" => config.context_word_limit.to_string(),
        "docs_retrieved" => config.docs_retrieved.to_string(),
        "n_variants" => config.n_variants.to_string(),
        "use_reranker" => config.use_reranker.to_string(),
        "rerank_threshold" => config.rerank_threshold.to_string(),
        other => return Err(GridError::UnknownAxis(other.to_string())),
    })
}

/// Expands the spec into every combination, in nested-loop order with the
/// first declared axis outermost. Frozen axes are applied to every config.
pub fn enumerate_grid(spec: &GridSpec) -> Result<Vec<PipelineConfig>, GridError> {
    for (axis, values) in &spec.axes {
        if values.is_empty() {
            return Err(GridError::EmptyAxis(axis.clone()));
        }
        if spec.frozen.contains_key(axis) {
            return Err(GridError::FrozenOverlap(axis.clone()));
        }
    }
    let mut base = PipelineConfig::default();
    for (axis, value) in &spec.frozen {
        apply_axis(&mut base, axis, value)?;
    }
    let mut configs = vec![base];
    for (axis, values) in &spec.axes {
        let mut next = Vec::with_capacity(configs.len() * values.len());
        for config in &configs {
            for value in values {
                let mut extended = config.clone();
                apply_axis(&mut extended, axis, value)?;
                next.push(extended);
            }
        }
        configs = next;
    }
    Ok(configs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConfig {
    pub config_id: String,
    pub avg_relevance: f64,
    pub avg_faithfulness: f64,
}

/// Sorts evaluated configs by average relevance descending, then average
/// faithfulness descending, then config id. The first entry is the champion.
pub fn rank_configs(
    reports: &BTreeMap<String, EvalReport>,
) -> Result<Vec<RankedConfig>, GridError> {
    if reports.is_empty() {
        return Err(GridError::NoReports);
    }
    let mut ranked: Vec<RankedConfig> = reports
        .iter()
        .map(|(config_id, report)| RankedConfig {
            config_id: config_id.clone(),
            avg_relevance: report.avg_relevance,
            avg_faithfulness: report.avg_faithfulness,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.avg_relevance
            .partial_cmp(&a.avg_relevance)
            .unwrap()
            .then_with(|| b.avg_faithfulness.partial_cmp(&a.avg_faithfulness).unwrap())
            .then_with(|| a.config_id.cmp(&b.config_id))
    });
    Ok(ranked)
}
