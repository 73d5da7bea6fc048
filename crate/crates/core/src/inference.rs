//! Generation over rendered prompts and parsing of raw completions into
//! structured predictions.
//!
//! [`parse_response`] is total: every input string maps to exactly one
//! [`ParseStatus`] and it never fails. Malformed generations fall back to
//! NEI so a full record set always remains scorable; the failure shows up in
//! the parse status instead of an error.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Label;
use crate::orchestrator::{ModelArtifact, TrainerBackend};
use crate::prompts::{self, PromptInstance};

/// Label assigned when a generation contains no decodable verdict at all.
pub const FALLBACK_LABEL: Label = Label::Nei;

/// How many leading whitespace tokens the fallback path scans for a verdict.
pub const FALLBACK_TOKEN_WINDOW: usize = 10;

/// Decoding settings for a generation run. Greedy is the only mode: the
/// evaluation contract requires deterministic outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    pub decoding: Decoding,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    Greedy,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_new_tokens: 512,
            decoding: Decoding::Greedy,
            stop_sequences: Vec::new(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.max_new_tokens < 1 {
            return Err(InferenceError::InvalidConfig {
                reason: "max_new_tokens must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// How a raw generation was recovered into a structured prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    /// The text matched the `Prediction: … Explanation: …` form.
    Clean,
    /// No structured form, but a decodable verdict token appeared early.
    Fallback,
    /// No verdict anywhere in the scan window; the fallback label applies.
    Failed,
}

/// Structured prediction recovered from one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub record_id: String,
    pub label: Label,
    pub explanation: String,
    pub parse_status: ParseStatus,
    pub raw_text: String,
}

impl ParsedPrediction {
    pub fn from_raw(record_id: impl Into<String>, raw: &str) -> Self {
        let parsed = parse_response(raw);
        ParsedPrediction {
            record_id: record_id.into(),
            label: parsed.label,
            explanation: parsed.explanation,
            parse_status: parsed.status,
            raw_text: raw.to_string(),
        }
    }
}

/// Result of [`parse_response`] before a record id is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub label: Label,
    pub explanation: String,
    pub status: ParseStatus,
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid generation config: {reason}")]
    InvalidConfig { reason: String },
    #[error("prompt for record `{record_id}` carries a training target; render with include_target=false")]
    PromptHasTarget { record_id: String },
    #[error("backend failed serving record `{record_id}`: {message}")]
    Backend { record_id: String, message: String },
}

fn clean_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?is)^\s*prediction\s*:\s*(.*?)\s*explanation\s*:\s*(.*)$")
            .expect("clean-response pattern compiles")
    })
}

fn whitespace_token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Text after the first sentence boundary (`.`, `!`, `?` run) at or past
/// byte offset `from`; empty when there is none.
fn explanation_after_boundary(text: &str, from: usize) -> String {
    let mut chars = text[from..].char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let mut end = from + i + c.len_utf8();
            while let Some(&(j, n)) = chars.peek() {
                if matches!(n, '.' | '!' | '?') {
                    end = from + j + n.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            return text[end..].trim().to_string();
        }
    }
    String::new()
}

/// Parse one raw completion. Total over arbitrary input.
///
/// Clean path: the text matches `Prediction: <token> Explanation: <rest>`
/// (case-insensitive, whitespace-tolerant) and the token decodes. Fallback
/// path: the first decodable verdict token among the first
/// [`FALLBACK_TOKEN_WINDOW`] whitespace tokens supplies the label, and the
/// explanation is whatever follows the next sentence boundary. Failed path:
/// nothing decodes; the label is [`FALLBACK_LABEL`] and the explanation is
/// empty.
pub fn parse_response(raw: &str) -> ParsedResponse {
    if let Some(captures) = clean_pattern().captures(raw) {
        let token = captures.get(1).map(|m| m.as_str()).unwrap_or("");
        if let Some(label) = prompts::decode_label(token) {
            let explanation = captures
                .get(2)
                .map(|m| m.as_str().trim().to_string())
                .unwrap_or_default();
            return ParsedResponse {
                label,
                explanation,
                status: ParseStatus::Clean,
            };
        }
    }

    for &(start, end) in whitespace_token_spans(raw)
        .iter()
        .take(FALLBACK_TOKEN_WINDOW)
    {
        if let Some(label) = prompts::decode_label(&raw[start..end]) {
            return ParsedResponse {
                label,
                explanation: explanation_after_boundary(raw, start),
                status: ParseStatus::Fallback,
            };
        }
    }

    ParsedResponse {
        label: FALLBACK_LABEL,
        explanation: String::new(),
        status: ParseStatus::Failed,
    }
}

/// Outcome of generating for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum GenerationOutcome {
    Generated(String),
    /// The prompt could not be served (e.g. it exceeds the backend's
    /// sequence budget); the run continues with the remaining records.
    Skipped {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawGeneration {
    pub record_id: String,
    pub outcome: GenerationOutcome,
}

/// Generate one completion per prompt, order-preserving.
///
/// Prompts must be rendered without targets. A prompt longer than the
/// backend's sequence budget (approximated in whitespace tokens) yields a
/// per-record skip; a backend serve failure aborts the run with the failing
/// record id attached.
pub fn generate(
    artifact: &ModelArtifact,
    prompts: &[PromptInstance],
    config: &GenerationConfig,
    backend: &dyn TrainerBackend,
) -> Result<Vec<RawGeneration>, InferenceError> {
    config.validate()?;
    let capabilities = backend.capabilities();
    let mut out = Vec::with_capacity(prompts.len());
    for prompt in prompts {
        if !prompt.target_text.is_empty() {
            return Err(InferenceError::PromptHasTarget {
                record_id: prompt.record_id.clone(),
            });
        }
        let prompt_tokens = prompt.input_text.split_whitespace().count();
        if prompt_tokens > capabilities.max_sequence_length {
            out.push(RawGeneration {
                record_id: prompt.record_id.clone(),
                outcome: GenerationOutcome::Skipped {
                    reason: format!(
                        "prompt length {prompt_tokens} tokens exceeds backend limit {}",
                        capabilities.max_sequence_length
                    ),
                },
            });
            continue;
        }
        let text = backend
            .generate(&artifact.weights, prompt, config)
            .map_err(|e| InferenceError::Backend {
                record_id: prompt.record_id.clone(),
                message: e.to_string(),
            })?;
        out.push(RawGeneration {
            record_id: prompt.record_id.clone(),
            outcome: GenerationOutcome::Generated(text),
        });
    }
    Ok(out)
}

/// Parse every generation into a structured prediction. Skipped generations
/// count as failed parses over an empty raw text.
pub fn parse_generations(generations: &[RawGeneration]) -> Vec<ParsedPrediction> {
    generations
        .iter()
        .map(|generation| match &generation.outcome {
            GenerationOutcome::Generated(text) => {
                ParsedPrediction::from_raw(&generation.record_id, text)
            }
            GenerationOutcome::Skipped { .. } => ParsedPrediction {
                record_id: generation.record_id.clone(),
                label: FALLBACK_LABEL,
                explanation: String::new(),
                parse_status: ParseStatus::Failed,
                raw_text: String::new(),
            },
        })
        .collect()
}
