//! Instruction templates and the label token codec.
//!
//! The two templates ship as plain-text fixtures under `templates/` and are
//! embedded at compile time. Their exact bytes — including the differing
//! blank-line discipline between the two — are part of the contract:
//! rendering substitutes the `{claim}`, `{justification}`, `{label}` and
//! `{expl}` slots and changes nothing else. Substituted values are inserted
//! verbatim and never rescanned for placeholders.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClaimRecord, Label};

/// Classification-only instruction (response is the bare label token).
pub const CLASSIFICATION_ONLY_TEMPLATE: &str = include_str!("../templates/classification.txt");

/// Joint classification + explanation instruction (response is
/// `Prediction: <label> Explanation: <text>`).
pub const JOINT_TEMPLATE: &str = include_str!("../templates/joint.txt");

const RESPONSE_MARKER: &str = "### Response:\n";
const JOINT_INFERENCE_PREFIX: &str = "Prediction:";

/// Which of the two instruction templates to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ClassificationOnly,
    Joint,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::ClassificationOnly => "classification_only",
            PromptKind::Joint => "joint",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            PromptKind::ClassificationOnly => CLASSIFICATION_ONLY_TEMPLATE,
            PromptKind::Joint => JOINT_TEMPLATE,
        }
    }
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rendered prompt: the model input plus, for training, the completion the
/// model is expected to produce.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInstance {
    pub record_id: String,
    pub kind: PromptKind,
    /// Full prompt up to and including the response header. For joint
    /// inference prompts this additionally ends with the `Prediction:`
    /// prefix so the completion starts at the label.
    pub input_text: String,
    /// Training completion; empty when rendered for inference.
    pub target_text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("record `{record_id}`: claim is empty")]
    EmptyClaim { record_id: String },
    #[error("record `{record_id}`: label required to render a training target")]
    MissingLabel { record_id: String },
    #[error("record `{record_id}`: explanation required to render a joint training target")]
    MissingExplanation { record_id: String },
}

/// Canonical surface token for a label: `true`, `not_enough_info`, `false`.
pub fn encode_label(label: Label) -> &'static str {
    match label {
        Label::False => "false",
        Label::True => "true",
        Label::Nei => "not_enough_info",
    }
}

/// Tokens [`decode_label`] accepts, for error messages.
pub fn accepted_label_tokens() -> &'static [&'static str] {
    &[
        "true",
        "false",
        "not_enough_info",
        "nei",
        "not enough info",
        "not_enough_information",
        "1",
        "2",
        "3",
    ]
}

/// Decode a surface token into a label. Case-insensitive; surrounding
/// whitespace and punctuation are ignored; accepts the canonical tokens, the
/// NEI aliases, and the option-menu digits (1: True, 2: NEI, 3: False).
/// Returns `None` for anything unrecognized — never a silent default.
pub fn decode_label(token: &str) -> Option<Label> {
    let trimmed =
        token.trim_matches(|c: char| c.is_whitespace() || (!c.is_alphanumeric() && c != '_'));
    let lowered = trimmed.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    match collapsed.as_str() {
        "true" | "1" => Some(Label::True),
        "false" | "3" => Some(Label::False),
        "not_enough_info" | "nei" | "not enough info" | "not_enough_information" | "2" => {
            Some(Label::Nei)
        }
        _ => None,
    }
}

/// Substitute `{name}` placeholders. Unknown placeholders and stray braces
/// pass through untouched; inserted values are never rescanned.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        match rest[open..].find('}') {
            Some(close_rel) => {
                let key = &rest[open + 1..open + close_rel];
                match vars.iter().find(|(name, _)| *name == key) {
                    Some((_, value)) => out.push_str(value),
                    None => out.push_str(&rest[open..=open + close_rel]),
                }
                rest = &rest[open + close_rel + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Render `record` into the given template.
///
/// With `include_target` the training completion is produced as well; the
/// record must then carry a label (and, for joint prompts, a nonempty
/// explanation). Without it the target is left empty and joint prompts get
/// the `Prediction:` inference prefix appended.
pub fn render_prompt(
    record: &ClaimRecord,
    kind: PromptKind,
    include_target: bool,
) -> Result<PromptInstance, PromptError> {
    if record.claim.trim().is_empty() {
        return Err(PromptError::EmptyClaim {
            record_id: record.id.clone(),
        });
    }
    let template = kind.template();
    let marker = template
        .find(RESPONSE_MARKER)
        .expect("template contains a response header");
    let boundary = marker + RESPONSE_MARKER.len();
    let (input_template, target_template) = (&template[..boundary], &template[boundary..]);

    let mut input_text = fill(
        input_template,
        &[
            ("claim", record.claim.as_str()),
            ("justification", record.justification.as_str()),
        ],
    );

    let target_text = if include_target {
        let label = record.label.ok_or_else(|| PromptError::MissingLabel {
            record_id: record.id.clone(),
        })?;
        if kind == PromptKind::Joint && record.explanation.trim().is_empty() {
            return Err(PromptError::MissingExplanation {
                record_id: record.id.clone(),
            });
        }
        fill(
            target_template,
            &[
                ("label", encode_label(label)),
                ("expl", record.explanation.as_str()),
            ],
        )
    } else {
        if kind == PromptKind::Joint {
            input_text.push_str(JOINT_INFERENCE_PREFIX);
        }
        String::new()
    };

    Ok(PromptInstance {
        record_id: record.id.clone(),
        kind,
        input_text,
        target_text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_record() -> ClaimRecord {
        ClaimRecord {
            id: "r1".into(),
            claim: "Company X doubled its revenue in 2023.".into(),
            justification: "The annual filing reports flat revenue.".into(),
            explanation: "The filing contradicts the claim.".into(),
            label: Some(Label::False),
            sector: None,
            is_augmented: false,
            parent_id: None,
        }
    }

    #[test]
    fn templates_are_lf_only_without_trailing_newline() {
        for template in [CLASSIFICATION_ONLY_TEMPLATE, JOINT_TEMPLATE] {
            assert!(!template.contains('\r'));
            assert!(!template.ends_with('\n'));
            assert_eq!(template.matches(RESPONSE_MARKER).count(), 1);
        }
        assert!(CLASSIFICATION_ONLY_TEMPLATE.ends_with("### Response:\n{label}"));
        assert!(JOINT_TEMPLATE.ends_with("### Response:\nPrediction: {label} Explanation: {expl}"));
    }

    #[test]
    fn encode_decode_roundtrip() {
        for label in Label::ALL {
            assert_eq!(decode_label(encode_label(label)), Some(label));
        }
        assert_eq!(encode_label(Label::Nei), "not_enough_info");
    }

    #[test]
    fn decode_accepts_aliases_digits_and_noise() {
        assert_eq!(decode_label("2"), Some(Label::Nei));
        assert_eq!(decode_label("1"), Some(Label::True));
        assert_eq!(decode_label("3"), Some(Label::False));
        assert_eq!(decode_label("NEI"), Some(Label::Nei));
        assert_eq!(decode_label("Not Enough Info"), Some(Label::Nei));
        assert_eq!(decode_label("not_enough_information"), Some(Label::Nei));
        assert_eq!(decode_label("  TRUE.  "), Some(Label::True));
        assert_eq!(decode_label("\u{201c}false\u{201d},"), Some(Label::False));
        assert_eq!(decode_label("maybe"), None);
        assert_eq!(decode_label(""), None);
        assert_eq!(decode_label("0"), None);
    }

    #[test]
    fn classification_render_is_bit_exact() {
        let record = fixture_record();
        let prompt = render_prompt(&record, PromptKind::ClassificationOnly, true).unwrap();
        let expected_full = CLASSIFICATION_ONLY_TEMPLATE
            .replace("{claim}", &record.claim)
            .replace("{justification}", &record.justification)
            .replace("{label}", "false");
        assert_eq!(
            format!("{}{}", prompt.input_text, prompt.target_text),
            expected_full
        );
        assert_eq!(prompt.target_text, "false");
        assert!(prompt.input_text.ends_with("### Response:\n"));
    }

    #[test]
    fn joint_render_is_bit_exact() {
        let record = fixture_record();
        let prompt = render_prompt(&record, PromptKind::Joint, true).unwrap();
        let expected_full = JOINT_TEMPLATE
            .replace("{claim}", &record.claim)
            .replace("{justification}", &record.justification)
            .replace("{label}", "false")
            .replace("{expl}", &record.explanation);
        assert_eq!(
            format!("{}{}", prompt.input_text, prompt.target_text),
            expected_full
        );
        assert_eq!(
            prompt.target_text,
            "Prediction: false Explanation: The filing contradicts the claim."
        );
    }

    #[test]
    fn joint_inference_prompt_ends_with_prediction_prefix() {
        let record = fixture_record();
        let prompt = render_prompt(&record, PromptKind::Joint, false).unwrap();
        assert!(prompt.input_text.ends_with("### Response:\nPrediction:"));
        assert!(prompt.target_text.is_empty());
    }

    #[test]
    fn empty_justification_keeps_structure() {
        let mut record = fixture_record();
        record.justification = String::new();
        // classification template separates sections with blank lines
        let prompt = render_prompt(&record, PromptKind::ClassificationOnly, false).unwrap();
        assert!(prompt
            .input_text
            .contains("### Justification:\n\n\n### Response:\n"));
        // joint template packs sections tightly
        let prompt = render_prompt(&record, PromptKind::Joint, false).unwrap();
        assert!(prompt
            .input_text
            .contains("### Justification:\n\n### Response:\n"));
    }

    #[test]
    fn placeholder_text_in_fields_is_not_expanded() {
        let mut record = fixture_record();
        record.claim = "A claim containing {label} and {expl} literally.".into();
        let prompt = render_prompt(&record, PromptKind::Joint, true).unwrap();
        assert!(prompt.input_text.contains("{label}"));
        assert!(prompt.input_text.contains("{expl}"));
        assert_eq!(
            prompt.target_text,
            "Prediction: false Explanation: The filing contradicts the claim."
        );
    }

    #[test]
    fn missing_label_and_explanation_error() {
        let mut record = fixture_record();
        record.label = None;
        assert_eq!(
            render_prompt(&record, PromptKind::ClassificationOnly, true).unwrap_err(),
            PromptError::MissingLabel {
                record_id: "r1".into()
            },
        );

        let mut record = fixture_record();
        record.explanation = "  ".into();
        assert_eq!(
            render_prompt(&record, PromptKind::Joint, true).unwrap_err(),
            PromptError::MissingExplanation {
                record_id: "r1".into()
            },
        );
        // classification-only targets do not need an explanation
        assert!(render_prompt(&record, PromptKind::ClassificationOnly, true).is_ok());
    }

    #[test]
    fn empty_claim_errors() {
        let mut record = fixture_record();
        record.claim = " \t".into();
        assert_eq!(
            render_prompt(&record, PromptKind::Joint, false).unwrap_err(),
            PromptError::EmptyClaim {
                record_id: "r1".into()
            },
        );
    }
}
