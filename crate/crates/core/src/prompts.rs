//! Prompt registry: every system/user prompt template used by augmentation,
//! reranking, answer generation, and judging, stored as named templates with
//! `{placeholder}` slots. Templates can be overridden from a prompts
//! directory (`<name>.system.txt` / `<name>.user.txt`).

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown prompt template '{0}'")]
    UnknownTemplate(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone)]
pub struct PromptRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

pub const QUERY_VARIANTS_NAIVE: &str = "query_variants_naive";
pub const QUERY_VARIANTS_MEDIUM: &str = "query_variants_medium";
pub const QUERY_VARIANTS_ADVANCED: &str = "query_variants_advanced";
pub const HYPOTHETICAL_ANSWER: &str = "hypothetical_answer";
pub const QUESTION_DECOMPOSITION: &str = "question_decomposition";
pub const QUESTION_REPHRASE: &str = "question_rephrase";
pub const QUESTION_CLASSIFIER: &str = "question_classifier";
pub const SUBQUESTION_QUERIES: &str = "subquestion_queries";
pub const RERANK_POINTWISE: &str = "rerank_pointwise";
pub const ANSWER_NAIVE: &str = "answer_naive";
pub const ANSWER_MEDIUM: &str = "answer_medium";
pub const ANSWER_ADVANCED: &str = "answer_advanced";
pub const JUDGE_RELEVANCE: &str = "judge_relevance";
pub const JUDGE_FAITHFULNESS: &str = "judge_faithfulness";

fn defaults() -> BTreeMap<String, PromptTemplate> {
    let mut m = BTreeMap::new();
    let mut add = |name: &str, system: &str, user: &str| {
        m.insert(
            name.to_string(),
            PromptTemplate {
                system: system.to_string(),
                user: user.to_string(),
            },
        );
    };

    add(
        QUERY_VARIANTS_NAIVE,
        "Generate a list of {k_queries} search query variants based on the user's question, \
         give me one query variant per line. There are no spelling mistakes in the original \
         question. Do not include any other text.",
        "{question}",
    );
    add(
        QUERY_VARIANTS_MEDIUM,
        "You are an expert in query generation, you will be given a question, please generate \
         {k_queries} relevant queries based on the question. Make sure every query generated \
         can yield new information when I use them to search. NEVER repeat similar search \
         queries.",
        "Original question: {question}",
    );
    add(
        QUERY_VARIANTS_ADVANCED,
        "Generate {k_queries} diverse search query variations for the given question. Follow these guidelines:\n\
         1. Each query should focus on different aspects or interpretations of the original question\n\
         2. Use synonyms and related terms where appropriate\n\
         3. Include both broad and specific variations\n\
         4. Maintain the core meaning while varying the expression\n\
         5. Write each query on a new line\n\
         6. Do not include any additional text or formatting\n\n\
         The original question is correctly spelled.",
        "Question to analyze: {question}\n\
         Please generate diverse query variations that capture different aspects of this question:",
    );
    add(
        HYPOTHETICAL_ANSWER,
        "Given the question, write a short hypothetical answer that could be true. Be brief and concise.",
        "{question}",
    );
    add(
        QUESTION_DECOMPOSITION,
        "You are an experienced Google search user, help the user breaking down a search \
         question into key components with shorthand entity annotation in numbered list style",
        "Question: {question}",
    );
    add(
        QUESTION_REPHRASE,
        "You are an experienced Google search user, help the search engine to find the results \
         user wanted. Given the main question and its components analysis, rephrase into a \
         longer question. What does the user really want?",
        "Question: {question}\n\n{components_str}",
    );
    add(
        QUESTION_CLASSIFIER,
        "You are an experienced Google search user, help the user determine if the search \
         question is a simple question or a composite question that consists of multiple \
         sub-questions. If it's a simple question, you should respond: SIMPLE, if it's a \
         composite question, you should respond: COMPOSITE.",
        "Question: {question}",
    );
    add(
        SUBQUESTION_QUERIES,
        "You are an experienced Google search user, help the user to answer the question. \
         Given the main question, for each sub-question, create a search query, row by row. \
         Your generated query must start with: query:",
        "Question: {question}",
    );
    add(
        RERANK_POINTWISE,
        "You are a helpful assistant that determines if a document contains information that \
         helps answer a given question. Answer only with 'Yes' or 'No'.",
        "Document: {doc_text}\n\n\
         Question: {question}\n\n\
         Does this document contain information that helps answer this question (only answer 'Yes' or 'No')?",
    );
    add(
        ANSWER_NAIVE,
        "You are a helpful assistant. Answer the question based on the provided documents.",
        "Documents: {context}\nQuestion: {question}\nAnswer: ",
    );
    add(
        ANSWER_MEDIUM,
        "You are given a question and you MUST respond by EXTRACTING the answer from provided \
         documents. If none of the documents contain the answer, respond with *'I don't know'*.",
        "Documents: {context}\nQuestion: {question}\nAnswer: ",
    );
    add(
        ANSWER_ADVANCED,
        "You must respond based strictly on the information in provided passages. Do not \
         incorporate any external knowledge or infer any details beyond what is given in the \
         passages.",
        "Provide a concise answer to the following question based on the information in the \
         provided documents. Documents:\n\
         {context}\n\
         *Question: {question}*\n\
         Answer: ",
    );
    add(
        JUDGE_RELEVANCE,
        "You are an expert evaluator for Retrieval-Augmented Generation (RAG) systems.\n\
         Your task is to assess the quality of responses generated by a RAG system based on the relevance (correctness) criteria:\n\
         Relevance - Measures the correctness and relevance of the answer to the question on a four-point scale:\n\
         2: The response correctly answers the user question and contains no irrelevant content\n\
         1: The response provides a useful answer to the user question, but may contain irrelevant content that do not harm the usefulness of the answer\n\
         0: No answer is provided in the response (e.g., \"I don't know\")\n\
         -1: The response does not answer the question whatsoever\n\
         You will be provided with:\n\
         - A question\n\
         - The response generated by the RAG system\n\
         - The retrieved documents used as context\n\
         - A gold reference answer (if available)\n\
         When a gold reference answer is provided, use it as an additional reference point for evaluating the correctness and completeness of the RAG system's response. The gold reference represents an ideal answer to the question.\n\
         Provide your evaluation in a structured JSON format with the following fields:\n\
         - evaluation_notes: Brief explanation of your reasoning for each score\n\
         - relevance_score: The relevance score (-1, 0, 1, or 2)\n\
         Be objective and thorough in your assessment. Focus on whether the response correctly answers the question.",
        "Please evaluate the following RAG system response:\n\
         QUESTION:\n\
         {question}\n\
         RESPONSE:\n\
         {answer}\n\
         GOLD REFERENCE ANSWER:\n\
         {reference_answer}\n\
         RETRIEVED DOCUMENTS:\n\
         {documents}\n\
         Based on the above, please evaluate the response on relevance (2, 1, 0, or -1).\n\
         Provide your evaluation in the following JSON format:\n\
         ```json\n\
         {\n\
         \"evaluation_notes\": \"[your reasoning in a single paragraph]\",\n\
         \"relevance_score\": [score]\n\
         }\n\
         ```",
    );
    add(
        JUDGE_FAITHFULNESS,
        "You are an expert evaluator for Retrieval-Augmented Generation (RAG) systems.\n\
         Your task is to assess the quality of responses generated by a RAG system based on the faithfulness (support) criteria:\n\
         Assess whether the response is grounded in the retrieved passages on a three-point scale:\n\
         1: Full support, all answer parts are grounded\n\
         0: Partial support, not all answer parts are grounded\n\
         -1: No support, all answer parts are not grounded\n\
         You will be provided with:\n\
         - A question\n\
         - The response generated by the RAG system\n\
         - The retrieved documents used as context\n\
         Provide your evaluation in a structured JSON format with the following fields:\n\
         - evaluation_notes: Brief explanation of your reasoning for each score\n\
         - faithfulness_score: The faithfulness score (-1, 0, or 1)\n\
         Be objective and thorough in your assessment. Focus on whether the response correctly answers the question and is supported by the retrieved documents.",
        "Please evaluate the following RAG system response:\n\
         QUESTION:\n\
         {question}\n\
         RESPONSE:\n\
         {answer}\n\
         GOLD REFERENCE ANSWER:\n\
         {reference_answer}\n\
         RETRIEVED DOCUMENTS:\n\
         {documents}\n\
         Based on the above, please evaluate the response on faithfulness (1, 0, or -1).\n\
         Provide your evaluation in the following JSON format:\n\
         ```json\n\
         {\n\
         \"evaluation_notes\": \"[your reasoning in a single paragraph]\",\n\
         \"faithfulness_score\": [score]\n\
         }\n\
         ```",
    );
    m
}

impl Default for PromptRegistry {
    fn default() -> Self {
        PromptRegistry {
            templates: defaults(),
        }
    }
}

impl PromptRegistry {
    /// Default templates, with any `<name>.system.txt` / `<name>.user.txt`
    /// files under `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut registry = Self::default();
        let names: Vec<String> = registry.templates.keys().cloned().collect();
        for name in names {
            let system_path = dir.join(format!("{name}.system.txt"));
            let user_path = dir.join(format!("{name}.user.txt"));
            let entry = registry.templates.get_mut(&name).unwrap();
            if system_path.is_file() {
                entry.system = std::fs::read_to_string(system_path)?;
            }
            if user_path.is_file() {
                entry.user = std::fs::read_to_string(user_path)?;
            }
        }
        Ok(registry)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(name)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
    }

    /// Renders a template, substituting each `{key}` placeholder.
    pub fn render(
        &self,
        name: &str,
        vars: &[(&str, &str)],
    ) -> Result<(String, String), PromptError> {
        let template = self.get(name)?;
        let fill = |text: &str| {
            let mut out = text.to_string();
            for (key, value) in vars {
                out = out.replace(&format!("{{{key}}}"), value);
            }
            out
        };
        Ok((fill(&template.system), fill(&template.user)))
    }

    /// SHA-256 over all templates in name order. Used to pin the shipped
    /// prompts against accidental edits.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in &self.templates {
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update(t.system.as_bytes());
            hasher.update([0]);
            hasher.update(t.user.as_bytes());
            hasher.update([0]);
        }
        hex_encode(&hasher.finalize())
    }
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
