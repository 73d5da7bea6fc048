//! Stage configuration and multi-stage fine-tuning schedules over a
//! pluggable trainer backend.
//!
//! The orchestrator is a synchronous control loop: it renders prompts for
//! each stage, hands them to the backend together with the previous stage's
//! output weights, and checkpoints after every stage. Backends do the actual
//! parameter updates; the only contract is that training is deterministic
//! given (examples, config, initial weights, seed).

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{records_checksum, ClaimRecord};
use crate::inference::GenerationConfig;
use crate::prompts::{render_prompt, PromptError, PromptInstance, PromptKind};

pub const PRESET_NAMES: [&str; 4] = ["seqwen", "joint5", "joint8", "cls3"];

const WEIGHTS_FILE: &str = "weights.bin";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPrecision {
    FourBit,
    Full,
}

/// Hyperparameters of one fine-tuning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub prompt_kind: PromptKind,
    pub epochs: u32,
    pub learning_rate: f64,
    pub max_sequence_length: usize,
    pub total_batch_size: usize,
    pub adapter_rank: u32,
    pub adapter_alpha: u32,
    pub weight_precision: WeightPrecision,
    /// Whether justification-derived augmented records feed this stage.
    /// Defaults to true for classification-only stages and false for joint
    /// stages.
    pub include_augmented: bool,
}

impl StageConfig {
    fn defaults(prompt_kind: PromptKind, epochs: u32, include_augmented: bool) -> Self {
        StageConfig {
            prompt_kind,
            epochs,
            learning_rate: 2e-4,
            max_sequence_length: 1024,
            total_batch_size: 16,
            adapter_rank: 16,
            adapter_alpha: 16,
            weight_precision: WeightPrecision::FourBit,
            include_augmented,
        }
    }

    pub fn classification(epochs: u32) -> Self {
        Self::defaults(PromptKind::ClassificationOnly, epochs, true)
    }

    pub fn joint(epochs: u32) -> Self {
        Self::defaults(PromptKind::Joint, epochs, false)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.epochs < 1 {
            return Err("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("learning_rate must be positive".into());
        }
        if self.adapter_rank == 0 {
            return Err("adapter_rank must be positive".into());
        }
        if self.max_sequence_length == 0 {
            return Err("max_sequence_length must be positive".into());
        }
        if self.total_batch_size == 0 {
            return Err("total_batch_size must be positive".into());
        }
        Ok(())
    }
}

/// An ordered list of stages; stage order is meaningful and preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub name: String,
    pub stages: Vec<StageConfig>,
}

impl SchedulePlan {
    pub fn total_epochs(&self) -> u32 {
        self.stages.iter().map(|s| s.epochs).sum()
    }
}

/// Resolve a named preset into its stage list.
pub fn plan_schedule(name: &str) -> Result<SchedulePlan, ScheduleError> {
    let stages = match name {
        "seqwen" => vec![StageConfig::classification(3), StageConfig::joint(5)],
        "joint5" => vec![StageConfig::joint(5)],
        "joint8" => vec![StageConfig::joint(8)],
        "cls3" => vec![StageConfig::classification(3)],
        _ => {
            return Err(ScheduleError::UnknownPreset {
                name: name.to_string(),
            })
        }
    };
    Ok(SchedulePlan {
        name: name.to_string(),
        stages,
    })
}

#[derive(Debug, Deserialize)]
struct PlanFile {
    name: Option<String>,
    #[serde(default, rename = "stage")]
    stages: Vec<PlanFileStage>,
}

#[derive(Debug, Deserialize)]
struct PlanFileStage {
    kind: PromptKind,
    epochs: u32,
    learning_rate: Option<f64>,
    max_sequence_length: Option<usize>,
    total_batch_size: Option<usize>,
    adapter_rank: Option<u32>,
    adapter_alpha: Option<u32>,
    weight_precision: Option<WeightPrecision>,
    include_augmented: Option<bool>,
}

/// Load a schedule plan from a toml file: a top-level `name` plus one
/// `[[stage]]` section per stage. Omitted keys take the stage-kind defaults.
pub fn load_plan(path: &Path) -> Result<SchedulePlan, ScheduleError> {
    let text = fs::read_to_string(path)?;
    let file: PlanFile = toml::from_str(&text).map_err(|e| ScheduleError::PlanParse {
        reason: e.to_string(),
    })?;
    if file.stages.is_empty() {
        return Err(ScheduleError::EmptyPlan);
    }
    let stages = file
        .stages
        .into_iter()
        .map(|entry| {
            let mut stage = match entry.kind {
                PromptKind::ClassificationOnly => StageConfig::classification(entry.epochs),
                PromptKind::Joint => StageConfig::joint(entry.epochs),
            };
            if let Some(v) = entry.learning_rate {
                stage.learning_rate = v;
            }
            if let Some(v) = entry.max_sequence_length {
                stage.max_sequence_length = v;
            }
            if let Some(v) = entry.total_batch_size {
                stage.total_batch_size = v;
            }
            if let Some(v) = entry.adapter_rank {
                stage.adapter_rank = v;
            }
            if let Some(v) = entry.adapter_alpha {
                stage.adapter_alpha = v;
            }
            if let Some(v) = entry.weight_precision {
                stage.weight_precision = v;
            }
            if let Some(v) = entry.include_augmented {
                stage.include_augmented = v;
            }
            stage
        })
        .collect();
    let name = file.name.unwrap_or_else(|| {
        path.file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("plan")
            .to_string()
    });
    Ok(SchedulePlan { name, stages })
}

/// What a backend can handle.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendCapabilities {
    pub max_sequence_length: usize,
    pub precisions: Vec<WeightPrecision>,
}

/// Opaque weight state passed between stages. The payload is meaningful
/// only to the backend that produced it; the id is the sha256 of the
/// payload and doubles as its integrity checksum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightsHandle {
    pub id: String,
    pub payload: Vec<u8>,
}

impl WeightsHandle {
    pub fn new(payload: Vec<u8>) -> Self {
        let id = hex::encode(Sha256::digest(&payload));
        WeightsHandle { id, payload }
    }

    /// Untrained base weights.
    pub fn base() -> Self {
        WeightsHandle::new(Vec::new())
    }
}

/// Everything a backend needs for one training stage.
pub struct TrainRequest<'a> {
    pub examples: &'a [PromptInstance],
    pub config: &'a StageConfig,
    pub init_weights: &'a WeightsHandle,
    pub seed: u64,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
}

impl BackendError {
    pub fn new(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
        }
    }
}

/// A pluggable trainer/generator. `train` must be deterministic given
/// (examples, config, initial weights, seed).
pub trait TrainerBackend {
    fn name(&self) -> &str;
    fn capabilities(&self) -> BackendCapabilities;
    fn train(&mut self, request: &TrainRequest<'_>) -> Result<WeightsHandle, BackendError>;
    fn generate(
        &self,
        weights: &WeightsHandle,
        prompt: &PromptInstance,
        config: &GenerationConfig,
    ) -> Result<String, BackendError>;
}

/// One completed stage as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub index: usize,
    pub prompt_kind: PromptKind,
    pub epochs: u32,
    pub learning_rate: f64,
    pub max_sequence_length: usize,
    pub total_batch_size: usize,
    pub adapter_rank: u32,
    pub adapter_alpha: u32,
    pub weight_precision: WeightPrecision,
    pub include_augmented: bool,
    pub example_count: usize,
    pub init_weights_id: String,
    pub output_weights_id: String,
    pub completed_at_unix: u64,
}

/// Full description of a training run; enough to reproduce it with the same
/// backend and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schedule_name: String,
    pub backend: String,
    pub seed: u64,
    pub dataset_checksum: String,
    pub total_epochs: u32,
    pub weights_id: String,
    pub stages: Vec<StageRecord>,
    pub tool_version: String,
}

impl RunManifest {
    /// Canonical json with stage timestamps zeroed, for comparing reruns.
    pub fn canonical_without_timestamps(&self) -> serde_json::Value {
        let mut manifest = self.clone();
        for stage in &mut manifest.stages {
            stage.completed_at_unix = 0;
        }
        serde_json::to_value(manifest).expect("manifest serializes")
    }
}

/// Trained weights plus the manifest describing how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub weights: WeightsHandle,
    pub manifest: RunManifest,
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("unknown schedule preset `{name}`; available presets: seqwen, joint5, joint8, cls3")]
    UnknownPreset { name: String },
    #[error("schedule plan has no stages")]
    EmptyPlan,
    #[error("stage {index}: {reason}")]
    InvalidStage { index: usize, reason: String },
    #[error("stage {stage}: backend `{backend}` does not support {precision:?} precision")]
    UnsupportedPrecision {
        stage: usize,
        backend: String,
        precision: WeightPrecision,
    },
    #[error("stage {stage}: sequence length {requested} exceeds backend limit {max}")]
    SequenceLengthExceeded {
        stage: usize,
        requested: usize,
        max: usize,
    },
    #[error("record `{record_id}` has no label; every training record must be labeled")]
    UnlabeledRecord { record_id: String },
    #[error("stage {stage} is a joint stage but record `{record_id}` has no explanation target")]
    MissingExplanation { record_id: String, stage: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("stage {stage}: backend failure: {message}")]
    Backend { stage: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("plan file parse error: {reason}")]
    PlanParse { reason: String },
    #[error("weights checksum mismatch: manifest says {expected}, payload hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
}

fn stage_applicable<'a>(
    records: &'a [ClaimRecord],
    stage: &'a StageConfig,
) -> impl Iterator<Item = &'a ClaimRecord> {
    records
        .iter()
        .filter(move |r| stage.include_augmented || !r.is_augmented)
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Run every stage of `plan` in order, chaining weights between stages.
///
/// All stages are pre-flighted before any training starts: backend
/// capabilities, labels, and (for joint stages) explanation targets. With a
/// `checkpoint_dir`, each stage's output is saved under
/// `<dir>/stage-<index>` before the next stage begins, so a later backend
/// failure leaves the last completed checkpoint on disk.
pub fn run_schedule(
    plan: &SchedulePlan,
    records: &[ClaimRecord],
    backend: &mut dyn TrainerBackend,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<ModelArtifact, ScheduleError> {
    if plan.stages.is_empty() {
        return Err(ScheduleError::EmptyPlan);
    }
    for (index, stage) in plan.stages.iter().enumerate() {
        stage
            .validate()
            .map_err(|reason| ScheduleError::InvalidStage { index, reason })?;
    }

    let capabilities = backend.capabilities();
    for (index, stage) in plan.stages.iter().enumerate() {
        if !capabilities.precisions.contains(&stage.weight_precision) {
            return Err(ScheduleError::UnsupportedPrecision {
                stage: index,
                backend: backend.name().to_string(),
                precision: stage.weight_precision,
            });
        }
        if stage.max_sequence_length > capabilities.max_sequence_length {
            return Err(ScheduleError::SequenceLengthExceeded {
                stage: index,
                requested: stage.max_sequence_length,
                max: capabilities.max_sequence_length,
            });
        }
    }

    // Pre-flight completeness: nothing trains unless every stage can run.
    for (index, stage) in plan.stages.iter().enumerate() {
        for record in stage_applicable(records, stage) {
            if record.label.is_none() {
                return Err(ScheduleError::UnlabeledRecord {
                    record_id: record.id.clone(),
                });
            }
            if stage.prompt_kind == PromptKind::Joint && record.explanation.trim().is_empty() {
                return Err(ScheduleError::MissingExplanation {
                    record_id: record.id.clone(),
                    stage: index,
                });
            }
        }
    }

    let dataset_checksum = records_checksum(records);
    let mut weights = WeightsHandle::base();
    let mut completed: Vec<StageRecord> = Vec::new();

    for (index, stage) in plan.stages.iter().enumerate() {
        let examples: Vec<PromptInstance> = stage_applicable(records, stage)
            .map(|record| render_prompt(record, stage.prompt_kind, true))
            .collect::<Result<_, _>>()?;
        let request = TrainRequest {
            examples: &examples,
            config: stage,
            init_weights: &weights,
            seed,
        };
        let output = backend
            .train(&request)
            .map_err(|e| ScheduleError::Backend {
                stage: index,
                message: e.message,
            })?;
        completed.push(StageRecord {
            index,
            prompt_kind: stage.prompt_kind,
            epochs: stage.epochs,
            learning_rate: stage.learning_rate,
            max_sequence_length: stage.max_sequence_length,
            total_batch_size: stage.total_batch_size,
            adapter_rank: stage.adapter_rank,
            adapter_alpha: stage.adapter_alpha,
            weight_precision: stage.weight_precision,
            include_augmented: stage.include_augmented,
            example_count: examples.len(),
            init_weights_id: weights.id.clone(),
            output_weights_id: output.id.clone(),
            completed_at_unix: now_unix(),
        });
        weights = output;

        if let Some(dir) = checkpoint_dir {
            let manifest = build_manifest(
                plan,
                backend.name(),
                seed,
                &dataset_checksum,
                &completed,
                &weights,
            );
            let artifact = ModelArtifact {
                weights: weights.clone(),
                manifest,
            };
            save_artifact(&artifact, &dir.join(format!("stage-{index:02}")))?;
        }
    }

    let manifest = build_manifest(
        plan,
        backend.name(),
        seed,
        &dataset_checksum,
        &completed,
        &weights,
    );
    Ok(ModelArtifact { weights, manifest })
}

fn build_manifest(
    plan: &SchedulePlan,
    backend: &str,
    seed: u64,
    dataset_checksum: &str,
    stages: &[StageRecord],
    weights: &WeightsHandle,
) -> RunManifest {
    RunManifest {
        schedule_name: plan.name.clone(),
        backend: backend.to_string(),
        seed,
        dataset_checksum: dataset_checksum.to_string(),
        total_epochs: stages.iter().map(|s| s.epochs).sum(),
        weights_id: weights.id.clone(),
        stages: stages.to_vec(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Persist an artifact as `manifest.json` plus `weights.bin` under `dir`.
pub fn save_artifact(artifact: &ModelArtifact, dir: &Path) -> Result<(), ScheduleError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(WEIGHTS_FILE), &artifact.weights.payload)?;
    let manifest = serde_json::to_string_pretty(&artifact.manifest)?;
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Load an artifact saved by [`save_artifact`], verifying the weights
/// payload against the checksum recorded in the manifest.
pub fn load_artifact(dir: &Path) -> Result<ModelArtifact, ScheduleError> {
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let payload = fs::read(dir.join(WEIGHTS_FILE))?;
    let actual = hex::encode(Sha256::digest(&payload));
    if actual != manifest.weights_id {
        return Err(ScheduleError::ChecksumMismatch {
            expected: manifest.weights_id,
            actual,
        });
    }
    Ok(ModelArtifact {
        weights: WeightsHandle {
            id: actual,
            payload,
        },
        manifest,
    })
}
