//! Prompted ranking: 20-candidate pools scored 0 to 10 by a chat model
//! under a fixed JSON response schema.

mod provider;
mod run;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Document;
use crate::pools::{RankingExample, Task};
use crate::{seed, NarbError, Result};

#[cfg(feature = "http")]
pub use provider::HttpProvider;
pub use provider::{ConstantProvider, OracleProvider, Provider, ProviderConfig, ProviderRequest, ReplayProvider};
pub use run::{read_transcript, run_prompted_eval, EvalReport, ExampleResult, TranscriptEntry};

pub const POOL_SIZE: usize = 20;
/// Tokens of text preceding a rhetorical anchor shown as context.
pub const CONTEXT_TOKENS: usize = 50;
pub const SCORE_MAX: f64 = 10.0;

const TEMPLATE: &str = include_str!("template.txt");

/// One pool prepared for prompting. `permutation[p]` is the original
/// candidate index shown at position `p` (id `C{p+1:02}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub example_id: String,
    pub task: Task,
    pub anchor_text: String,
    pub candidates: Vec<String>,
    pub context: Option<String>,
    pub permutation: Vec<usize>,
    pub seed: u64,
}

pub fn candidate_id(position: usize) -> String {
    format!("C{:02}", position + 1)
}

impl PromptSpec {
    pub fn new(
        example_id: impl Into<String>,
        task: Task,
        anchor_text: impl Into<String>,
        candidates: Vec<String>,
        context: Option<String>,
        seed: u64,
    ) -> Result<Self> {
        let example_id = example_id.into();
        if candidates.len() != POOL_SIZE {
            return Err(NarbError::InvalidArgument(format!(
                "`{example_id}` has {} candidates; prompting needs exactly {POOL_SIZE}",
                candidates.len()
            )));
        }
        let mut permutation: Vec<usize> = (0..POOL_SIZE).collect();
        permutation.shuffle(&mut seed::rng(seed::derive(seed, &format!("prompt-order/{example_id}"), 0)));
        Ok(PromptSpec {
            example_id,
            task,
            anchor_text: anchor_text.into(),
            candidates,
            context,
            permutation,
            seed,
        })
    }

    /// Texts are read from `docs`; rhetorical anchors must be the first
    /// branch of their set and get the preceding tokens as context.
    pub fn from_example<'a>(example: &RankingExample, docs: impl Fn(&str) -> Option<&'a Document>, seed: u64) -> Result<Self> {
        let doc_of = |id: &str| docs(id).ok_or_else(|| NarbError::InvalidData(format!("no document `{id}`")));
        let anchor_doc = doc_of(&example.anchor.doc_id)?;
        let texts = example
            .candidates
            .iter()
            .map(|c| doc_of(&c.doc_id)?.span_text(c))
            .collect::<Result<Vec<_>>>()?;
        let context = match example.task {
            Task::Narrative => None,
            Task::Rhetorical => {
                if example.positives().any(|p| p.start < example.anchor.start) {
                    return Err(NarbError::InvalidArgument(format!(
                        "`{}`: rhetorical prompts use first-branch anchors only",
                        example.example_id
                    )));
                }
                let end = example.anchor.start;
                let start = end.saturating_sub(CONTEXT_TOKENS);
                Some(if start == end {
                    String::new()
                } else {
                    let span = crate::corpus::Span::new(example.anchor.doc_id.clone(), start, end)?;
                    anchor_doc.span_text(&span)?
                })
            }
        };
        Self::new(
            example.example_id.clone(),
            example.task,
            anchor_doc.span_text(&example.anchor)?,
            texts,
            context,
            seed,
        )
    }

    /// `(id, text)` in presentation order.
    pub fn presented(&self) -> Vec<(String, String)> {
        self.permutation
            .iter()
            .enumerate()
            .map(|(p, &i)| (candidate_id(p), self.candidates[i].clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltPrompt {
    pub text: String,
    pub schema: Value,
}

/// Response schema: a score for every id and exactly three reasons.
pub fn response_schema() -> Value {
    let ids: Vec<String> = (0..POOL_SIZE).map(candidate_id).collect();
    let props: serde_json::Map<String, Value> = ids
        .iter()
        .map(|id| (id.clone(), serde_json::json!({"type": "number", "minimum": 0.0, "maximum": SCORE_MAX})))
        .collect();
    serde_json::json!({
        "type": "object",
        "required": ["scores", "top3"],
        "properties": {
            "scores": {"type": "object", "required": ids, "properties": props},
            "top3": {
                "type": "array", "minItems": 3, "maxItems": 3,
                "items": {
                    "type": "object", "required": ["id", "reasoning"],
                    "properties": {"id": {"type": "string"}, "reasoning": {"type": "string"}}
                }
            }
        }
    })
}

pub fn build_prompt(spec: &PromptSpec) -> Result<BuiltPrompt> {
    if spec.candidates.len() != POOL_SIZE || spec.permutation.len() != POOL_SIZE {
        return Err(NarbError::InvalidArgument(format!(
            "`{}` needs exactly {POOL_SIZE} candidates",
            spec.example_id
        )));
    }
    let mut check = spec.permutation.clone();
    check.sort_unstable();
    if check != (0..POOL_SIZE).collect::<Vec<_>>() {
        return Err(NarbError::InvalidData(format!("`{}` has a broken permutation", spec.example_id)));
    }
    let (name, description) = match spec.task {
        Task::Narrative => (
            "narrative parallelism",
            "Two stories are parallel when they share the same abstract lesson or story schema, even if characters, settings and wording differ.",
        ),
        Task::Rhetorical => (
            "rhetorical parallelism",
            "Two spans are parallel when they mirror each other's syntactic or semantic structure within the same passage.",
        ),
    };
    let context_block = match &spec.context {
        Some(c) => format!("\nPreceding context:\n<<<\n{c}\n>>>\n"),
        None => String::new(),
    };
    let candidates: String = spec
        .presented()
        .into_iter()
        .map(|(id, text)| format!("[{id}]\n<<<\n{text}\n>>>\n"))
        .collect();
    let ids: Vec<String> = (0..POOL_SIZE).map(candidate_id).collect();
    let text = TEMPLATE
        .replace("{task_name}", name)
        .replace("{task_description}", description)
        .replace("{context_block}", &context_block)
        .replace("{anchor}", &spec.anchor_text)
        .replace("{candidates}", candidates.trim_end())
        .replace("{ids}", &ids.join(", "));
    Ok(BuiltPrompt {
        text,
        schema: response_schema(),
    })
}

/// Scores mapped back to the original candidate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub scores: Vec<f64>,
    /// Original candidate index and reasoning.
    pub top3: Vec<(usize, String)>,
    pub warnings: Vec<String>,
}

/// First balanced `{...}` object in `raw`, skipping braces inside strings.
fn first_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn as_score(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

pub fn parse_response(raw: &str, spec: &PromptSpec) -> Result<ModelResponse> {
    let value: Value = match serde_json::from_str(raw.trim()) {
        Ok(v) => v,
        Err(_) => {
            let obj = first_json_object(raw).ok_or_else(|| NarbError::Schema("no JSON object in response".into()))?;
            serde_json::from_str(obj).map_err(|e| NarbError::Schema(format!("unparseable JSON object: {e}")))?
        }
    };
    let scores_obj = value
        .get("scores")
        .and_then(Value::as_object)
        .ok_or_else(|| NarbError::Schema("missing `scores` object".into()))?;
    let mut warnings = Vec::new();
    let mut scores = vec![f64::NAN; POOL_SIZE];
    for (p, &orig) in spec.permutation.iter().enumerate() {
        let id = candidate_id(p);
        let v = scores_obj
            .get(&id)
            .ok_or_else(|| NarbError::Schema(format!("missing score for {id}")))?;
        let s = as_score(v).ok_or_else(|| NarbError::Schema(format!("score for {id} is not a number: {v}")))?;
        if !(0.0..=SCORE_MAX).contains(&s) {
            return Err(NarbError::Schema(format!("score {s} for {id} outside [0, {SCORE_MAX}]")));
        }
        scores[orig] = s;
    }
    for k in scores_obj.keys() {
        if !(0..POOL_SIZE).any(|p| candidate_id(p) == *k) {
            warnings.push(format!("unknown id {k} ignored"));
        }
    }
    let mut top3 = Vec::new();
    match value.get("top3").and_then(Value::as_array) {
        None => warnings.push("missing top3".into()),
        Some(items) => {
            for item in items {
                let id = item.get("id").and_then(Value::as_str).unwrap_or_default();
                let reason = item.get("reasoning").and_then(Value::as_str).unwrap_or_default();
                match (0..POOL_SIZE).find(|&p| candidate_id(p) == id) {
                    Some(p) => top3.push((spec.permutation[p], reason.to_string())),
                    None => warnings.push(format!("top3 names unknown id `{id}`")),
                }
            }
            if top3.len() == 3 {
                let mut sorted = scores.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let cut = sorted[2];
                if top3.iter().any(|(i, _)| scores[*i] < cut) {
                    warnings.push("top3 disagrees with the three highest scores".into());
                }
            } else {
                warnings.push(format!("top3 has {} valid entries", top3.len()));
            }
        }
    }
    for w in &warnings {
        log::warn!("{}: {w}", spec.example_id);
    }
    Ok(ModelResponse { scores, top3, warnings })
}
