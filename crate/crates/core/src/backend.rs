//! Built-in trainer backends.
//!
//! [`MemorizingBackend`] is the deterministic mock used for tests and dry
//! runs: training memorizes each example's target keyed by record id, and
//! generation replays the memorized target (a perfectly overfit model). For
//! records it never saw, it synthesizes a stable pseudo-prediction from the
//! prompt so evaluation stays fully populated. All state lives in the
//! weights payload, so handles round-trip through artifact files unchanged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Label;
use crate::inference::GenerationConfig;
use crate::orchestrator::{
    BackendCapabilities, BackendError, TrainRequest, TrainerBackend, WeightPrecision, WeightsHandle,
};
use crate::prompts::{encode_label, PromptInstance, PromptKind};

/// Backend names accepted by [`backend_by_name`].
pub const BACKEND_NAMES: [&str; 1] = ["mock"];

/// Look up a built-in backend. `echo` is accepted as an alias for `mock`.
pub fn backend_by_name(name: &str) -> Option<Box<dyn TrainerBackend>> {
    match name {
        "mock" | "echo" => Some(Box::new(MemorizingBackend)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ResponseFormat {
    #[default]
    LabelOnly,
    Joint,
}

/// Everything the mock "learned", serialized as the weights payload.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct MemorizedState {
    format: ResponseFormat,
    memory: BTreeMap<String, String>,
}

impl MemorizedState {
    fn from_handle(weights: &WeightsHandle) -> Result<Self, BackendError> {
        if weights.payload.is_empty() {
            return Ok(MemorizedState::default());
        }
        serde_json::from_slice(&weights.payload)
            .map_err(|e| BackendError::new(format!("weights payload not readable: {e}")))
    }

    fn to_handle(&self) -> Result<WeightsHandle, BackendError> {
        let payload = serde_json::to_vec(self)
            .map_err(|e| BackendError::new(format!("weights payload not writable: {e}")))?;
        Ok(WeightsHandle::new(payload))
    }
}

/// Deterministic mock backend; see the module docs.
#[derive(Debug, Default, Clone, Copy)]
pub struct MemorizingBackend;

fn extract_section<'a>(text: &'a str, start_marker: &str, end_marker: &str) -> &'a str {
    let Some(start) = text.find(start_marker) else {
        return "";
    };
    let body = &text[start + start_marker.len()..];
    match body.find(end_marker) {
        Some(end) => body[..end].trim(),
        None => body.trim(),
    }
}

fn first_sentence(text: &str) -> &str {
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            return text[..i + c.len_utf8()].trim();
        }
    }
    text.trim()
}

/// Stable pseudo-label: hash of the claim text, reduced mod 3.
fn pseudo_label(claim: &str) -> Label {
    let digest = Sha256::digest(claim.trim().as_bytes());
    Label::from_code(digest[0] % 3).expect("mod 3 is a valid code")
}

fn apply_generation_limits(mut text: String, config: &GenerationConfig) -> String {
    for stop in &config.stop_sequences {
        if stop.is_empty() {
            continue;
        }
        if let Some(i) = text.find(stop.as_str()) {
            text.truncate(i);
        }
    }
    let token_count = text.split_whitespace().count();
    if token_count > config.max_new_tokens {
        return text
            .split_whitespace()
            .take(config.max_new_tokens)
            .collect::<Vec<_>>()
            .join(" ");
    }
    text
}

impl MemorizingBackend {
    fn synthesize(state: &MemorizedState, prompt: &PromptInstance) -> String {
        let claim = extract_section(&prompt.input_text, "### Claim:\n", "### Justification:");
        let justification =
            extract_section(&prompt.input_text, "### Justification:\n", "### Response:");
        let label = pseudo_label(claim);
        let token = encode_label(label);
        match state.format {
            ResponseFormat::LabelOnly => token.to_string(),
            ResponseFormat::Joint => {
                let explanation = if justification.is_empty() {
                    claim
                } else {
                    first_sentence(justification)
                };
                format!("Prediction: {token} Explanation: {explanation}")
            }
        }
    }
}

impl TrainerBackend for MemorizingBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            max_sequence_length: 8192,
            precisions: vec![WeightPrecision::FourBit, WeightPrecision::Full],
        }
    }

    fn train(&mut self, request: &TrainRequest<'_>) -> Result<WeightsHandle, BackendError> {
        let mut state = MemorizedState::from_handle(request.init_weights)?;
        for example in request.examples {
            state
                .memory
                .insert(example.record_id.clone(), example.target_text.clone());
        }
        state.format = match request.config.prompt_kind {
            PromptKind::ClassificationOnly => ResponseFormat::LabelOnly,
            PromptKind::Joint => ResponseFormat::Joint,
        };
        // The seed does not enter the state: memorization is already
        // deterministic in (examples, config, init weights).
        state.to_handle()
    }

    fn generate(
        &self,
        weights: &WeightsHandle,
        prompt: &PromptInstance,
        config: &GenerationConfig,
    ) -> Result<String, BackendError> {
        let state = MemorizedState::from_handle(weights)?;
        let text = match state.memory.get(&prompt.record_id) {
            Some(target) => target.clone(),
            None => Self::synthesize(&state, prompt),
        };
        Ok(apply_generation_limits(text, config))
    }
}

/// One recorded `train` invocation.
#[derive(Debug, Clone)]
pub struct RecordedTrainCall {
    pub prompt_kind: PromptKind,
    pub epochs: u32,
    pub seed: u64,
    pub example_count: usize,
    pub example_targets: Vec<String>,
    pub init_weights_id: String,
    pub output_weights_id: String,
}

/// Wraps another backend and records every training call; used to assert
/// schedule contracts (call order, stage chaining) in tests.
#[derive(Debug, Default)]
pub struct RecordingBackend<B> {
    pub inner: B,
    pub calls: Vec<RecordedTrainCall>,
}

impl<B> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            calls: Vec::new(),
        }
    }
}

impl<B: TrainerBackend> TrainerBackend for RecordingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn capabilities(&self) -> BackendCapabilities {
        self.inner.capabilities()
    }

    fn train(&mut self, request: &TrainRequest<'_>) -> Result<WeightsHandle, BackendError> {
        let output = self.inner.train(request)?;
        self.calls.push(RecordedTrainCall {
            prompt_kind: request.config.prompt_kind,
            epochs: request.config.epochs,
            seed: request.seed,
            example_count: request.examples.len(),
            example_targets: request
                .examples
                .iter()
                .map(|e| e.target_text.clone())
                .collect(),
            init_weights_id: request.init_weights.id.clone(),
            output_weights_id: output.id.clone(),
        });
        Ok(output)
    }

    fn generate(
        &self,
        weights: &WeightsHandle,
        prompt: &PromptInstance,
        config: &GenerationConfig,
    ) -> Result<String, BackendError> {
        self.inner.generate(weights, prompt, config)
    }
}

/// Wraps another backend and fails the n-th training call (1-based); used to
/// test checkpoint retention on mid-schedule aborts.
#[derive(Debug)]
pub struct FailingBackend<B> {
    pub inner: B,
    pub fail_on_call: usize,
    train_calls: usize,
}

impl<B> FailingBackend<B> {
    pub fn new(inner: B, fail_on_call: usize) -> Self {
        FailingBackend {
            inner,
            fail_on_call,
            train_calls: 0,
        }
    }
}

impl<B: TrainerBackend> TrainerBackend for FailingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn capabilities(&self) -> BackendCapabilities {
        self.inner.capabilities()
    }

    fn train(&mut self, request: &TrainRequest<'_>) -> Result<WeightsHandle, BackendError> {
        self.train_calls += 1;
        if self.train_calls == self.fail_on_call {
            return Err(BackendError::new(format!(
                "injected failure on train call {}",
                self.train_calls
            )));
        }
        self.inner.train(request)
    }

    fn generate(
        &self,
        weights: &WeightsHandle,
        prompt: &PromptInstance,
        config: &GenerationConfig,
    ) -> Result<String, BackendError> {
        self.inner.generate(weights, prompt, config)
    }
}
