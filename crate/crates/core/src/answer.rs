//! Context assembly under a word budget and final answer generation.

use serde::{Deserialize, Serialize};

use crate::augment::PromptStyle;
use crate::gateway::{ChatGateway, ChatRequest};
use crate::retrieval::RetrievalError;

/// Retrieved chunks concatenated in rerank order, each prefixed with a
/// `[Document i]` marker. The word budget counts content words only, not the
/// injected markers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssembledContext {
    pub text: String,
    pub included_chunk_refs: Vec<String>,
    pub truncated: bool,
    pub word_count: usize,
}

/// Concatenates `(chunk_ref, text)` pairs in order until the word budget is
/// exhausted. The chunk that would overflow is word-truncated and assembly
/// stops there.
pub fn assemble_context(docs: &[(String, String)], word_limit: usize) -> AssembledContext {
    assert!(word_limit >= 1, "word_limit must be >= 1");
    let mut parts: Vec<String> = Vec::new();
    let mut included = Vec::new();
    let mut used = 0usize;
    let mut truncated = false;
    for (i, (chunk_ref, text)) in docs.iter().enumerate() {
        let words: Vec<&str> = text.split_whitespace().collect();
        let remaining = word_limit - used;
        if remaining == 0 {
            truncated = true;
            break;
        }
        let take = words.len().min(remaining);
        if take < words.len() {
            truncated = true;
        }
        if take == 0 {
            continue;
        }
        parts.push(format!("[Document {}] {}", i + 1, words[..take].join(" ")));
        included.push(chunk_ref.clone());
        used += take;
        if truncated {
            break;
        }
    }
    AssembledContext {
        text: parts.join("\n"),
        included_chunk_refs: included,
        truncated: truncated || docs.is_empty(),
        word_count: used,
    }
}

/// One gateway call with the style's system/user prompts, `{context}` and
/// `{question}` filled. Returns trimmed text.
pub fn generate_answer(
    gateway: &dyn ChatGateway,
    prompts: &crate::prompts::PromptRegistry,
    question: &str,
    context: &AssembledContext,
    style: PromptStyle,
) -> Result<String, RetrievalError> {
    let (system, user) = prompts.render(
        style.answer_template(),
        &[("context", context.text.as_str()), ("question", question)],
    )?;
    let response = gateway.complete(&ChatRequest::new(&system, &user))?;
    Ok(response.text.trim().to_string())
}

/// True iff the answer, lowercased and stripped of leading punctuation and
/// quotes, equals or begins with "i don't know" / "i do not know".
pub fn is_abstention(answer: &str) -> bool {
    let normalized: String = answer
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace() || *c == '\'')
        .collect();
    let normalized = normalized.split_whitespace().collect::<Vec<_>>().join(" ");
    normalized.starts_with("i don't know")
        || normalized.starts_with("i dont know")
        || normalized.starts_with("i do not know")
}
