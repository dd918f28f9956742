//! Question augmentation: query variants, the decomposition chain, and
//! hypothetical answer generation. Produces the [`QueryBundle`] consumed by
//! retrieval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatGateway, ChatRequest, GatewayError};
use crate::prompts::{self, PromptError, PromptRegistry};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("no parseable query variants in LLM output")]
    NoVariants,
    #[error("empty hypothetical answer from LLM")]
    EmptyHypothetical,
    #[error("no numbered components found in LLM output")]
    NoComponents,
    #[error("empty rephrased question from LLM")]
    EmptyRephrase,
    #[error("no 'query:' lines found in LLM output")]
    NoSubQueries,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    Naive,
    Medium,
    Advanced,
}

impl PromptStyle {
    pub fn variant_template(self) -> &'static str {
        match self {
            PromptStyle::Naive => prompts::QUERY_VARIANTS_NAIVE,
            PromptStyle::Medium => prompts::QUERY_VARIANTS_MEDIUM,
            PromptStyle::Advanced => prompts::QUERY_VARIANTS_ADVANCED,
        }
    }

    pub fn answer_template(self) -> &'static str {
        match self {
            PromptStyle::Naive => prompts::ANSWER_NAIVE,
            PromptStyle::Medium => prompts::ANSWER_MEDIUM,
            PromptStyle::Advanced => prompts::ANSWER_ADVANCED,
        }
    }
}

impl std::str::FromStr for PromptStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(PromptStyle::Naive),
            "medium" => Ok(PromptStyle::Medium),
            "advanced" => Ok(PromptStyle::Advanced),
            other => Err(format!("unknown prompt style '{other}'")),
        }
    }
}

impl std::fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PromptStyle::Naive => "naive",
            PromptStyle::Medium => "medium",
            PromptStyle::Advanced => "advanced",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentStrategy {
    None,
    Variants,
    Decomposition,
    Hypothetical,
}

impl std::str::FromStr for AugmentStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(AugmentStrategy::None),
            "variants" => Ok(AugmentStrategy::Variants),
            "decomposition" => Ok(AugmentStrategy::Decomposition),
            "hypothetical" => Ok(AugmentStrategy::Hypothetical),
            other => Err(format!("unknown augmentation strategy '{other}'")),
        }
    }
}

impl std::fmt::Display for AugmentStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AugmentStrategy::None => "none",
            AugmentStrategy::Variants => "variants",
            AugmentStrategy::Decomposition => "decomposition",
            AugmentStrategy::Hypothetical => "hypothetical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOrigin {
    Original,
    Variant,
    Hypothetical,
    SubQuery,
    Rephrased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub text: String,
    pub origin: QueryOrigin,
}

/// The original question plus its augmented search queries. Always contains
/// the original question exactly once; query texts are unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBundle {
    pub original_question: String,
    pub queries: Vec<SearchQuery>,
    pub strategy: AugmentStrategy,
    /// Set when the decomposition chain ran; records its intermediate steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionTrace>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuestionClass {
    Simple,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTrace {
    pub components: Vec<String>,
    pub rephrased_question: String,
    pub classification: QuestionClass,
    pub sub_queries: Vec<String>,
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let without_number = line
        .strip_prefix(|c: char| c.is_ascii_digit())
        .map(|rest| rest.trim_start_matches(|c: char| c.is_ascii_digit()))
        .and_then(|rest| rest.strip_prefix(['.', ')']));
    let stripped = match without_number {
        Some(rest) => rest,
        None => line.strip_prefix(['-', '*']).unwrap_or(line),
    };
    stripped.trim()
}

/// Parses LLM output into up to `k` query variants: one per line, list
/// markers stripped, blanks dropped, case-insensitive dedup.
pub fn parse_variants(raw: &str, k: usize) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for line in raw.lines() {
        let v = strip_list_marker(line);
        if v.is_empty() {
            continue;
        }
        if seen.insert(v.to_lowercase()) {
            out.push(v.to_string());
        }
        if out.len() == k {
            break;
        }
    }
    out
}

pub struct QueryAugmenter<'a> {
    pub gateway: &'a dyn ChatGateway,
    pub prompts: &'a PromptRegistry,
}

impl<'a> QueryAugmenter<'a> {
    pub fn new(gateway: &'a dyn ChatGateway, prompts: &'a PromptRegistry) -> Self {
        QueryAugmenter { gateway, prompts }
    }

    fn call(&self, template: &str, vars: &[(&str, &str)]) -> Result<String, AugmentError> {
        let (system, user) = self.prompts.render(template, vars)?;
        let resp = self.gateway.complete(&ChatRequest::new(&system, &user))?;
        Ok(resp.text)
    }

    pub fn generate_query_variants(
        &self,
        question: &str,
        k: usize,
        style: PromptStyle,
    ) -> Result<Vec<String>, AugmentError> {
        assert!(k >= 1, "k must be >= 1");
        let raw = self.call(
            style.variant_template(),
            &[("question", question), ("k_queries", &k.to_string())],
        )?;
        let variants = parse_variants(&raw, k);
        if variants.is_empty() {
            return Err(AugmentError::NoVariants);
        }
        Ok(variants)
    }

    pub fn generate_hypothetical_answer(&self, question: &str) -> Result<String, AugmentError> {
        let raw = self.call(prompts::HYPOTHETICAL_ANSWER, &[("question", question)])?;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(AugmentError::EmptyHypothetical);
        }
        Ok(trimmed.to_string())
    }

    pub fn decompose_question(&self, question: &str) -> Result<Vec<String>, AugmentError> {
        let raw = self.call(prompts::QUESTION_DECOMPOSITION, &[("question", question)])?;
        let components: Vec<String> = raw
            .lines()
            .filter(|line| {
                let t = line.trim();
                t.starts_with(|c: char| c.is_ascii_digit())
                    && t.trim_start_matches(|c: char| c.is_ascii_digit()).starts_with(['.', ')'])
            })
            .map(|line| strip_list_marker(line).to_string())
            .filter(|c| !c.is_empty())
            .collect();
        if components.is_empty() {
            return Err(AugmentError::NoComponents);
        }
        Ok(components)
    }

    pub fn rephrase_question(
        &self,
        question: &str,
        components: &[String],
    ) -> Result<String, AugmentError> {
        assert!(!components.is_empty(), "components must be non-empty");
        let components_str = components
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {c}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        let raw = self.call(
            prompts::QUESTION_REPHRASE,
            &[("question", question), ("components_str", &components_str)],
        )?;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(AugmentError::EmptyRephrase);
        }
        Ok(trimmed.to_string())
    }

    /// Total by decision: COMPOSITE wins if both tokens appear; neither token
    /// defaults to SIMPLE with a warning.
    pub fn classify_question(&self, rephrased: &str) -> Result<(QuestionClass, Option<String>), AugmentError> {
        let raw = self.call(prompts::QUESTION_CLASSIFIER, &[("question", rephrased)])?;
        let upper = raw.to_uppercase();
        if upper.contains("COMPOSITE") {
            Ok((QuestionClass::Composite, None))
        } else if upper.contains("SIMPLE") {
            Ok((QuestionClass::Simple, None))
        } else {
            Ok((
                QuestionClass::Simple,
                Some(format!(
                    "classifier reply contained neither SIMPLE nor COMPOSITE, defaulting to SIMPLE: '{}'",
                    raw.trim().chars().take(80).collect::<String>()
                )),
            ))
        }
    }

    pub fn subquestions_to_queries(&self, question: &str) -> Result<Vec<String>, AugmentError> {
        let raw = self.call(prompts::SUBQUESTION_QUERIES, &[("question", question)])?;
        let queries: Vec<String> = raw
            .lines()
            .filter_map(|line| {
                let t = line.trim();
                if t.to_lowercase().starts_with("query:") {
                    Some(t[6..].trim().to_string())
                } else {
                    None
                }
            })
            .filter(|q| !q.is_empty())
            .collect();
        if queries.is_empty() {
            return Err(AugmentError::NoSubQueries);
        }
        Ok(queries)
    }

    /// Strategy dispatch. The bundle always starts with the original
    /// question; duplicates of it (case-insensitive) are dropped.
    pub fn augment(
        &self,
        question: &str,
        strategy: AugmentStrategy,
        k: usize,
        variant_style: PromptStyle,
    ) -> Result<QueryBundle, AugmentError> {
        let mut bundle = QueryBundle {
            original_question: question.to_string(),
            queries: vec![SearchQuery {
                text: question.to_string(),
                origin: QueryOrigin::Original,
            }],
            strategy,
            decomposition: None,
            warnings: Vec::new(),
        };
        let push = |bundle: &mut QueryBundle, text: String, origin: QueryOrigin| {
            let lower = text.to_lowercase();
            if !bundle.queries.iter().any(|q| q.text.to_lowercase() == lower) {
                bundle.queries.push(SearchQuery { text, origin });
            }
        };
        match strategy {
            AugmentStrategy::None => {}
            AugmentStrategy::Variants => {
                for v in self.generate_query_variants(question, k, variant_style)? {
                    push(&mut bundle, v, QueryOrigin::Variant);
                }
            }
            AugmentStrategy::Hypothetical => {
                let hypo = self.generate_hypothetical_answer(question)?;
                push(&mut bundle, hypo, QueryOrigin::Hypothetical);
            }
            AugmentStrategy::Decomposition => {
                let components = self.decompose_question(question)?;
                let rephrased = self.rephrase_question(question, &components)?;
                let (class, warning) = self.classify_question(&rephrased)?;
                if let Some(w) = warning {
                    bundle.warnings.push(w);
                }
                let sub_queries = match class {
                    QuestionClass::Composite => {
                        let subs = self.subquestions_to_queries(question)?;
                        for q in &subs {
                            push(&mut bundle, q.clone(), QueryOrigin::SubQuery);
                        }
                        subs
                    }
                    QuestionClass::Simple => {
                        // Fall back to query variants on the rephrased question.
                        for v in self.generate_query_variants(&rephrased, k, variant_style)? {
                            push(&mut bundle, v, QueryOrigin::Variant);
                        }
                        Vec::new()
                    }
                };
                bundle.decomposition = Some(DecompositionTrace {
                    components,
                    rephrased_question: rephrased,
                    classification: class,
                    sub_queries,
                });
            }
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::StubGateway;

    fn augmenter_parts(rules: Vec<crate::gateway::StubRule>) -> (StubGateway, PromptRegistry) {
        (StubGateway::new(rules), PromptRegistry::default())
    }

    #[test]
    fn variants_parse_and_truncate() {
        assert_eq!(parse_variants("a\nb\nc", 8), vec!["a", "b", "c"]);
        assert_eq!(parse_variants("1. a\n2. a\n3. b", 8), vec!["a", "b"]);
        assert_eq!(parse_variants("- x\n* y\n\n2) z", 8), vec!["x", "y", "z"]);
        let ten: String = (0..10).map(|i| format!("v{i}\n")).collect();
        let first8: Vec<String> = (0..8).map(|i| format!("v{i}")).collect();
        assert_eq!(parse_variants(&ten, 8), first8);
    }

    #[test]
    fn variant_generation_errors_on_empty_output() {
        let (gw, reg) = augmenter_parts(vec![StubGateway::rule("question", "\n\n")]);
        let aug = QueryAugmenter::new(&gw, &reg);
        assert!(matches!(
            aug.generate_query_variants("the question", 8, PromptStyle::Naive),
            Err(AugmentError::NoVariants)
        ));
    }

    #[test]
    fn hypothetical_answer_is_trimmed_and_nonempty() {
        let (gw, reg) = augmenter_parts(vec![StubGateway::rule(
            "Eiffel",
            "  The Eiffel Tower is 330 m tall.  ",
        )]);
        let aug = QueryAugmenter::new(&gw, &reg);
        assert_eq!(
            aug.generate_hypothetical_answer("How tall is the Eiffel Tower?").unwrap(),
            "The Eiffel Tower is 330 m tall."
        );
    }

    #[test]
    fn whitespace_only_hypothetical_is_an_error() {
        let (gw, reg) = augmenter_parts(vec![StubGateway::rule("q", "   \n ")]);
        let aug = QueryAugmenter::new(&gw, &reg);
        assert!(matches!(
            aug.generate_hypothetical_answer("q"),
            Err(AugmentError::EmptyHypothetical)
        ));
    }

    #[test]
    fn decomposition_parses_numbered_list_only() {
        let (gw, reg) = augmenter_parts(vec![StubGateway::rule(
            "funding",
            "Here are the parts:\n1. funding amount\n2. RYSE (startup)\nHope that helps!",
        )]);
        let aug = QueryAugmenter::new(&gw, &reg);
        let components = aug.decompose_question("total funding amount ryse").unwrap();
        assert_eq!(components, vec!["funding amount", "RYSE (startup)"]);
    }

    #[test]
    fn decomposition_without_numbering_is_an_error() {
        let (gw, reg) = augmenter_parts(vec![StubGateway::rule("q", "free text only")]);
        let aug = QueryAugmenter::new(&gw, &reg);
        assert!(matches!(aug.decompose_question("q"), Err(AugmentError::NoComponents)));
    }

    #[test]
    fn classifier_decision_rule() {
        for (reply, expect, warned) in [
            ("SIMPLE", QuestionClass::Simple, false),
            ("This is COMPOSITE.", QuestionClass::Composite, false),
            ("simple and composite", QuestionClass::Composite, false),
            ("unsure", QuestionClass::Simple, true),
        ] {
            let (gw, reg) = augmenter_parts(vec![StubGateway::rule("Question:", reply)]);
            let aug = QueryAugmenter::new(&gw, &reg);
            let (class, warning) = aug.classify_question("q").unwrap();
            assert_eq!(class, expect, "reply {reply}");
            assert_eq!(warning.is_some(), warned, "reply {reply}");
        }
    }

    #[test]
    fn subquery_lines_are_extracted() {
        let (gw, reg) = augmenter_parts(vec![StubGateway::rule(
            "Question:",
            "Let me think.\nquery: first search\nSome prose.\nQuery: second search\n",
        )]);
        let aug = QueryAugmenter::new(&gw, &reg);
        assert_eq!(
            aug.subquestions_to_queries("q").unwrap(),
            vec!["first search", "second search"]
        );
    }

    #[test]
    fn subquery_without_matches_is_an_error() {
        let (gw, reg) = augmenter_parts(vec![StubGateway::rule("Question:", "no queries here")]);
        let aug = QueryAugmenter::new(&gw, &reg);
        assert!(matches!(
            aug.subquestions_to_queries("q"),
            Err(AugmentError::NoSubQueries)
        ));
    }

    #[test]
    fn augment_none_is_just_the_original() {
        let (gw, reg) = augmenter_parts(vec![]);
        let aug = QueryAugmenter::new(&gw, &reg);
        let bundle = aug
            .augment("the question", AugmentStrategy::None, 8, PromptStyle::Naive)
            .unwrap();
        assert_eq!(bundle.queries.len(), 1);
        assert_eq!(bundle.queries[0].origin, QueryOrigin::Original);
        assert_eq!(bundle.original_question, "the question");
    }

    #[test]
    fn augment_hypothetical_adds_one_query() {
        let (gw, reg) = augmenter_parts(vec![StubGateway::rule("tall", "It is 330 m tall.")]);
        let aug = QueryAugmenter::new(&gw, &reg);
        let bundle = aug
            .augment("How tall is it?", AugmentStrategy::Hypothetical, 8, PromptStyle::Naive)
            .unwrap();
        assert_eq!(bundle.queries.len(), 2);
        assert_eq!(bundle.queries[0].origin, QueryOrigin::Original);
        assert_eq!(bundle.queries[1].origin, QueryOrigin::Hypothetical);
        assert_eq!(bundle.queries[1].text, "It is 330 m tall.");
    }

    #[test]
    fn augment_variants_bounds_and_dedup() {
        let (gw, reg) = augmenter_parts(vec![StubGateway::rule(
            "colors",
            "1. colors of the sky\n2. Colors of the sky\n3. sky colors",
        )]);
        let aug = QueryAugmenter::new(&gw, &reg);
        let bundle = aug
            .augment("colors?", AugmentStrategy::Variants, 8, PromptStyle::Naive)
            .unwrap();
        assert!(bundle.queries.len() <= 9);
        assert_eq!(bundle.queries.len(), 3); // original + 2 unique variants
    }

    #[test]
    fn augment_decomposition_composite_uses_sub_queries() {
        // The chain issues: decompose, rephrase, classify, then sub-queries.
        // Rules keyed on distinctive system-prompt phrases, since decompose
        // and sub-query render identical user prompts.
        let reg = PromptRegistry::default();
        let gw = StubGateway::new(vec![
            StubGateway::rule("components analysis", "What is the total funding for RYSE?"),
            StubGateway::rule("simple question or a composite", "COMPOSITE"),
            StubGateway::rule("create a search query", "query: ryse funding\nquery: ryse startup"),
            StubGateway::rule("breaking down", "1. funding amount\n2. RYSE (startup)"),
        ]);
        let aug = QueryAugmenter::new(&gw, &reg);
        let bundle = aug
            .augment(
                "total funding amount digital health startups ryse",
                AugmentStrategy::Decomposition,
                8,
                PromptStyle::Naive,
            )
            .unwrap();
        assert_eq!(bundle.queries.len(), 3); // original + 2 sub-queries
        let trace = bundle.decomposition.unwrap();
        assert_eq!(trace.classification, QuestionClass::Composite);
        assert_eq!(trace.sub_queries, vec!["ryse funding", "ryse startup"]);
    }

    #[test]
    fn augment_decomposition_simple_falls_back_to_variants() {
        let reg = PromptRegistry::default();
        let gw = StubGateway::new(vec![
            StubGateway::rule("components analysis", "Rephrased longer question here"),
            StubGateway::rule("simple question or a composite", "SIMPLE"),
            StubGateway::rule("Rephrased longer question here", "variant one\nvariant two"),
            StubGateway::rule("breaking down", "1. a component"),
        ]);
        let aug = QueryAugmenter::new(&gw, &reg);
        let bundle = aug
            .augment("short q", AugmentStrategy::Decomposition, 8, PromptStyle::Naive)
            .unwrap();
        let trace = bundle.decomposition.clone().unwrap();
        assert_eq!(trace.classification, QuestionClass::Simple);
        assert!(trace.sub_queries.is_empty());
        assert_eq!(bundle.queries.len(), 3); // original + 2 variants
        assert!(bundle.queries[1..].iter().all(|q| q.origin == QueryOrigin::Variant));
    }

    #[test]
    fn classifier_prompt_renders_the_rephrased_question() {
        let reg = PromptRegistry::default();
        let (sys, user) = reg.render(crate::prompts::QUESTION_CLASSIFIER, &[("question", "R")]).unwrap();
        assert!(sys.contains("SIMPLE"));
        assert_eq!(user, "Question: R");
    }

    #[test]
    fn original_question_is_never_mutated() {
        let (gw, reg) = augmenter_parts(vec![StubGateway::rule("q", "Hypo answer.")]);
        let aug = QueryAugmenter::new(&gw, &reg);
        for strategy in [AugmentStrategy::None, AugmentStrategy::Hypothetical] {
            let bundle = aug.augment("the q", strategy, 8, PromptStyle::Naive).unwrap();
            assert_eq!(bundle.queries[0].text, "the q");
        }
    }
}
