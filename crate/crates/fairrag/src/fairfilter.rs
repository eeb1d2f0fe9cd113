//! Two-step prompt filtering: fairness filtering of retrieved documents,
//! then utility-based re-admission of the filtered-out ones.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::error::{FairRagError, Result};
use crate::gateway::{GenerationParams, LlmGateway};
use crate::retrieval::RetrievedSet;

pub const FAIRNESS_TEMPLATE: &str = include_str!("../templates/fairness_filter.txt");
pub const UTILITY_TEMPLATE: &str = include_str!("../templates/utility_filter.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterStage {
    Fairness,
    Utility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    Recovered,
    Unparseable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub chunk_id: String,
    pub stage: FilterStage,
    pub pass: bool,
    pub raw_response: String,
    pub parse_status: ParseStatus,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterResult {
    pub kept_fair: Vec<String>,
    pub readmitted_critical: Vec<String>,
    pub dropped: Vec<String>,
    pub verdicts: Vec<FilterVerdict>,
}

impl FilterResult {
    /// Final context ids, in original retrieval order.
    pub fn final_context(&self, retrieved: &RetrievedSet) -> Vec<String> {
        retrieved
            .entries
            .iter()
            .map(|(id, _)| id)
            .filter(|id| {
                self.kept_fair.contains(id) || self.readmitted_critical.contains(id)
            })
            .cloned()
            .collect()
    }
}

/// Prompt templates with {input}/{document} placeholders, overridable from
/// files.
#[derive(Debug, Clone)]
pub struct FilterTemplates {
    pub fairness: String,
    pub utility: String,
}

impl Default for FilterTemplates {
    fn default() -> Self {
        Self {
            fairness: FAIRNESS_TEMPLATE.to_string(),
            utility: UTILITY_TEMPLATE.to_string(),
        }
    }
}

impl FilterTemplates {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        Ok(Self {
            fairness: std::fs::read_to_string(dir.join("fairness_filter.txt"))?,
            utility: std::fs::read_to_string(dir.join("utility_filter.txt"))?,
        })
    }
}

pub fn render_template(template: &str, query: &str, document: &str) -> String {
    template
        .replace("{input}", query)
        .replace("{document}", document)
}

/// Finds the first parseable JSON object in a model response and reads its
/// "Pass" key (case-insensitive). Tolerates code fences and surrounding
/// prose; any non-boolean value is unparseable.
pub fn parse_verdict(response: &str) -> (Option<bool>, ParseStatus) {
    let trimmed = response.trim();
    let bytes = trimmed.as_bytes();
    let mut search_from = 0;
    while let Some(offset) = trimmed[search_from..].find('{') {
        let start = search_from + offset;
        // walk to the balanced closing brace
        let mut depth = 0usize;
        let mut end = None;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes[start..].iter().enumerate() {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + i + 1);
                        break;
                    }
                }
                _ => {}
            }
        }
        let Some(end) = end else { break };
        let candidate = &trimmed[start..end];
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(candidate) {
            if let Some(obj) = value.as_object() {
                for (key, val) in obj {
                    if key.eq_ignore_ascii_case("pass") {
                        return match val.as_bool() {
                            Some(b) => {
                                let status = if candidate == trimmed {
                                    ParseStatus::Ok
                                } else {
                                    ParseStatus::Recovered
                                };
                                (Some(b), status)
                            }
                            None => (None, ParseStatus::Unparseable),
                        };
                    }
                }
            }
        }
        search_from = end.max(start + 1);
    }
    (None, ParseStatus::Unparseable)
}

fn run_filter(
    stage: FilterStage,
    template: &str,
    query: &str,
    doc: &Chunk,
    gateway: &dyn LlmGateway,
    params: &GenerationParams,
) -> Result<FilterVerdict> {
    let prompt = render_template(template, query, &doc.text);
    let response = gateway
        .generate(&prompt, params)
        .map_err(|e| FairRagError::ChunkGateway {
            chunk_id: doc.chunk_id.clone(),
            source: Box::new(e),
        })?;
    let (parsed, parse_status) = parse_verdict(&response);
    // fail-safe defaults: an unreadable fairness verdict excludes the
    // document, an unreadable utility verdict does not re-admit it
    let pass = parsed.unwrap_or(false);
    Ok(FilterVerdict {
        chunk_id: doc.chunk_id.clone(),
        stage,
        pass,
        raw_response: response,
        parse_status,
    })
}

pub fn fairness_filter(
    query: &str,
    doc: &Chunk,
    gateway: &dyn LlmGateway,
    templates: &FilterTemplates,
    params: &GenerationParams,
) -> Result<FilterVerdict> {
    run_filter(FilterStage::Fairness, &templates.fairness, query, doc, gateway, params)
}

pub fn utility_filter(
    query: &str,
    doc: &Chunk,
    gateway: &dyn LlmGateway,
    templates: &FilterTemplates,
    params: &GenerationParams,
) -> Result<FilterVerdict> {
    run_filter(FilterStage::Utility, &templates.utility, query, doc, gateway, params)
}

/// Stage 1 on every retrieved document; stage 2 only on the fairness
/// failures. A document survives iff it is fair or (unfair and critical).
/// Gateway failures on one chunk drop that chunk and let the pipeline
/// finish for the rest.
pub fn run_pipeline(
    query: &str,
    retrieved: &RetrievedSet,
    docs: &[&Chunk],
    gateway: &dyn LlmGateway,
    templates: &FilterTemplates,
    params: &GenerationParams,
) -> Result<FilterResult> {
    let mut result = FilterResult::default();
    if retrieved.is_empty() {
        return Ok(result);
    }
    debug_assert_eq!(retrieved.len(), docs.len());
    let mut failed_stage1: Vec<&Chunk> = Vec::new();
    for doc in docs {
        match fairness_filter(query, doc, gateway, templates, params) {
            Ok(verdict) => {
                let pass = verdict.pass;
                result.verdicts.push(verdict);
                if pass {
                    result.kept_fair.push(doc.chunk_id.clone());
                } else {
                    failed_stage1.push(doc);
                }
            }
            Err(err) => {
                result.verdicts.push(FilterVerdict {
                    chunk_id: doc.chunk_id.clone(),
                    stage: FilterStage::Fairness,
                    pass: false,
                    raw_response: format!("<gateway error: {err}>"),
                    parse_status: ParseStatus::Unparseable,
                });
                result.dropped.push(doc.chunk_id.clone());
            }
        }
    }
    for doc in failed_stage1 {
        match utility_filter(query, doc, gateway, templates, params) {
            Ok(verdict) => {
                let pass = verdict.pass;
                result.verdicts.push(verdict);
                if pass {
                    result.readmitted_critical.push(doc.chunk_id.clone());
                } else {
                    result.dropped.push(doc.chunk_id.clone());
                }
            }
            Err(err) => {
                result.verdicts.push(FilterVerdict {
                    chunk_id: doc.chunk_id.clone(),
                    stage: FilterStage::Utility,
                    pass: false,
                    raw_response: format!("<gateway error: {err}>"),
                    parse_status: ParseStatus::Unparseable,
                });
                result.dropped.push(doc.chunk_id.clone());
            }
        }
    }
    Ok(result)
}

/// One verdict per line, for the audit log.
pub fn verdicts_to_jsonl(result: &FilterResult) -> Result<String> {
    let mut out = String::new();
    for v in &result.verdicts {
        out.push_str(&serde_json::to_string(v)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use crate::gateway::mock::{MockLlm, MockLlmSpec, MockMode};
    use crate::retrieval::RetrieverKind;
    use std::collections::BTreeMap;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            doc_id: id.into(),
            token_span: (0, tokenize(text).len()),
            text: text.into(),
            token_count: tokenize(text).len(),
        }
    }

    fn retrieved(ids: &[&str]) -> RetrievedSet {
        RetrievedSet {
            query_id: "q".into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.1))
                .collect(),
            retriever_kind: RetrieverKind::Bm25,
        }
    }

    #[test]
    fn parse_plain_json() {
        assert_eq!(parse_verdict("{\"Pass\": true}"), (Some(true), ParseStatus::Ok));
        assert_eq!(parse_verdict("{\"Pass\": false}"), (Some(false), ParseStatus::Ok));
    }

    #[test]
    fn parse_code_fenced_json() {
        let resp = "```json\n{\"Pass\": false}\n```";
        assert_eq!(parse_verdict(resp), (Some(false), ParseStatus::Recovered));
    }

    #[test]
    fn parse_with_surrounding_prose() {
        let resp = "Sure! Here is my verdict: {\"pass\": true} hope that helps";
        assert_eq!(parse_verdict(resp), (Some(true), ParseStatus::Recovered));
    }

    #[test]
    fn parse_non_boolean_is_unparseable() {
        assert_eq!(parse_verdict("{\"Pass\": \"yes\"}"), (None, ParseStatus::Unparseable));
    }

    #[test]
    fn parse_refusal_is_unparseable() {
        assert_eq!(parse_verdict("I cannot evaluate this."), (None, ParseStatus::Unparseable));
    }

    #[test]
    fn fairness_failsafe_default() {
        let llm = MockLlm::new(MockLlmSpec {
            mode: MockMode::FixedJson,
            fixed_response: "I cannot evaluate this.".into(),
            ..Default::default()
        });
        let c = chunk("c1", "some text");
        let v = fairness_filter("q", &c, &llm, &FilterTemplates::default(), &GenerationParams::default()).unwrap();
        assert!(!v.pass);
        assert_eq!(v.parse_status, ParseStatus::Unparseable);
    }

    #[test]
    fn rendered_prompt_instantiates_placeholders() {
        let p = render_template(FAIRNESS_TEMPLATE, "my query", "my doc");
        assert!(p.contains("### Query:my query"));
        assert!(p.contains("### Document: my doc"));
        assert!(p.starts_with("You are a fairness evaluation model."));
    }

    fn verdict_mock(fairness: &[(&str, bool)], utility: &[(&str, bool)]) -> MockLlm {
        let to_map = |pairs: &[(&str, bool)]| -> BTreeMap<String, bool> {
            pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
        };
        MockLlm::new(MockLlmSpec {
            fairness_verdicts: to_map(fairness),
            utility_verdicts: to_map(utility),
            fairness_default: true,
            utility_default: false,
            ..Default::default()
        })
    }

    #[test]
    fn pipeline_drops_unfair_noncritical() {
        let llm = verdict_mock(&[("doc2 text", false)], &[]);
        let docs = [chunk("c1", "doc1 text"), chunk("c2", "doc2 text"), chunk("c3", "doc3 text")];
        let refs: Vec<&Chunk> = docs.iter().collect();
        let set = retrieved(&["c1", "c2", "c3"]);
        let r = run_pipeline("q", &set, &refs, &llm, &FilterTemplates::default(), &GenerationParams::default()).unwrap();
        assert_eq!(r.kept_fair, vec!["c1", "c3"]);
        assert_eq!(r.dropped, vec!["c2"]);
        assert!(r.readmitted_critical.is_empty());
        assert_eq!(r.final_context(&set), vec!["c1", "c3"]);
    }

    #[test]
    fn pipeline_readmits_unfair_but_critical() {
        let llm = verdict_mock(&[("doc2 text", false)], &[("doc2 text", true)]);
        let docs = [chunk("c1", "doc1 text"), chunk("c2", "doc2 text")];
        let refs: Vec<&Chunk> = docs.iter().collect();
        let set = retrieved(&["c1", "c2"]);
        let r = run_pipeline("q", &set, &refs, &llm, &FilterTemplates::default(), &GenerationParams::default()).unwrap();
        assert_eq!(r.readmitted_critical, vec!["c2"]);
        assert_eq!(r.final_context(&set), vec!["c1", "c2"]);
    }

    #[test]
    fn all_fair_issues_no_utility_calls() {
        // utility table would return false for everything; if it were
        // consulted the docs would not be in kept_fair
        let llm = verdict_mock(&[], &[]);
        let docs = [chunk("c1", "a"), chunk("c2", "b")];
        let refs: Vec<&Chunk> = docs.iter().collect();
        let set = retrieved(&["c1", "c2"]);
        let r = run_pipeline("q", &set, &refs, &llm, &FilterTemplates::default(), &GenerationParams::default()).unwrap();
        assert_eq!(r.kept_fair.len(), 2);
        assert!(r.verdicts.iter().all(|v| v.stage == FilterStage::Fairness));
    }

    #[test]
    fn empty_retrieval_short_circuits() {
        let llm = verdict_mock(&[], &[]);
        let set = retrieved(&[]);
        let r = run_pipeline("q", &set, &[], &llm, &FilterTemplates::default(), &GenerationParams::default()).unwrap();
        assert!(r.verdicts.is_empty());
    }
}
