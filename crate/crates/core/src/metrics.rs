//! Classification and explanation metrics: micro F1, per-class statistics,
//! confusion matrices, ROUGE-1/2/L, and the composite overall score.
//!
//! Tokenization for ROUGE is fixed: lowercase, every non-alphanumeric
//! character becomes a space, split on whitespace, no stemming. Changing it
//! would change every reported score, so treat it as versioned behavior.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClaimRecord, Label};
use crate::inference::{ParseStatus, ParsedPrediction};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {predictions} predictions vs {golds} golds")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidN(usize),
    #[error("{name} must lie in [0, 1], got {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("no prediction for gold record `{0}`")]
    MissingPrediction(String),
    #[error("duplicate prediction for record `{0}`")]
    DuplicatePrediction(String),
    #[error("prediction `{0}` does not match any gold record")]
    UnknownPrediction(String),
    #[error("gold record `{0}` has no label")]
    UnlabeledGold(String),
}

/// 3×3 confusion counts indexed `[gold][predicted]` in label code order
/// (false, true, nei).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn zero() -> Self {
        ConfusionMatrix {
            counts: [[0; 3]; 3],
        }
    }

    pub fn count(&self, gold: Label, predicted: Label) -> u64 {
        self.counts[gold.code() as usize][predicted.code() as usize]
    }

    pub fn grid(&self) -> [[u64; 3]; 3] {
        self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, gold: Label) -> u64 {
        self.counts[gold.code() as usize].iter().sum()
    }

    pub fn col_sum(&self, predicted: Label) -> u64 {
        self.counts
            .iter()
            .map(|row| row[predicted.code() as usize])
            .sum()
    }

    pub fn diagonal_sum(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// Aligned text grid, gold labels as rows and predictions as columns.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:>16}", "gold \\ pred"));
        for label in Label::ALL {
            out.push_str(&format!("{:>17}", label.token()));
        }
        out.push('\n');
        for gold in Label::ALL {
            out.push_str(&format!("{:>16}", gold.token()));
            for pred in Label::ALL {
                out.push_str(&format!("{:>17}", self.count(gold, pred)));
            }
            out.push('\n');
        }
        out
    }
}

/// Precision / recall / F1 triple for one ROUGE variant or one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }

    fn zero() -> Self {
        RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    }

    fn perfect() -> Self {
        RougeScore {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        }
    }
}

/// Which ROUGE variant [`aggregate_rouge`] computes per pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    N(usize),
    Lcs,
}

/// Per-class precision/recall/F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Everything one evaluation run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(default = "default_run_name")]
    pub name: String,
    pub record_count: usize,
    pub micro_f1: f64,
    pub per_class: BTreeMap<Label, ClassStats>,
    pub confusion: ConfusionMatrix,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub overall: f64,
    pub failed_parse_rate: f64,
}

fn default_run_name() -> String {
    "run".to_string()
}

impl EvaluationReport {
    /// Markdown header matching the leaderboard column order.
    pub fn markdown_header() -> String {
        "| Run | Micro F1 | ROUGE-1 | ROUGE-2 | ROUGE-L | Overall Score |\n\
         |-----|----------|---------|---------|---------|---------------|"
            .to_string()
    }

    pub fn markdown_row(&self) -> String {
        format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
            self.name, self.micro_f1, self.rouge1.f1, self.rouge2.f1, self.rouge_l.f1, self.overall
        )
    }
}

/// Micro-averaged F1 over the three classes, computed from pooled
/// TP/FP/FN tallies. In this single-label setting the pooled false
/// positives equal the pooled false negatives, so the value coincides with
/// plain accuracy; the tallies are kept explicit so the equivalence is a
/// tested property rather than an assumption.
pub fn micro_f1(predictions: &[Label], golds: &[Label]) -> Result<f64, MetricsError> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut tp = [0u64; 3];
    let mut fp = [0u64; 3];
    let mut fn_ = [0u64; 3];
    for (&pred, &gold) in predictions.iter().zip(golds) {
        if pred == gold {
            tp[pred.code() as usize] += 1;
        } else {
            fp[pred.code() as usize] += 1;
            fn_[gold.code() as usize] += 1;
        }
    }
    let tp_sum: u64 = tp.iter().sum();
    let fp_sum: u64 = fp.iter().sum();
    let fn_sum: u64 = fn_.iter().sum();
    let precision = tp_sum as f64 / (tp_sum + fp_sum) as f64;
    let recall = tp_sum as f64 / (tp_sum + fn_sum) as f64;
    Ok(if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    })
}

/// Count `(gold, predicted)` pairs into a 3×3 grid.
pub fn confusion_matrix(
    predictions: &[Label],
    golds: &[Label],
) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let mut matrix = ConfusionMatrix::zero();
    for (&pred, &gold) in predictions.iter().zip(golds) {
        matrix.counts[gold.code() as usize][pred.code() as usize] += 1;
    }
    Ok(matrix)
}

/// Lowercase, map every non-alphanumeric character to a space, split on
/// whitespace. No stemming, no stopword removal.
pub fn tokenize_for_rouge(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N: clipped n-gram multiset overlap.
///
/// Empty-side conventions apply to the n-gram sequences: both sides empty
/// (fewer than `n` tokens) scores a perfect 1.0, exactly one empty side
/// scores 0.0.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<RougeScore, MetricsError> {
    if n < 1 {
        return Err(MetricsError::InvalidN(n));
    }
    let cand_tokens = tokenize_for_rouge(candidate);
    let ref_tokens = tokenize_for_rouge(reference);
    let cand_total = cand_tokens.len().saturating_sub(n - 1);
    let ref_total = ref_tokens.len().saturating_sub(n - 1);
    if cand_total == 0 && ref_total == 0 {
        return Ok(RougeScore::perfect());
    }
    if cand_total == 0 || ref_total == 0 {
        return Ok(RougeScore::zero());
    }
    let cand_counts = ngram_counts(&cand_tokens, n);
    let ref_counts = ngram_counts(&ref_tokens, n);
    let overlap: u64 = cand_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    let precision = overlap as f64 / cand_total as f64;
    let recall = overlap as f64 / ref_total as f64;
    Ok(RougeScore::from_pr(precision, recall))
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut current = vec![0usize; b.len() + 1];
    for token_a in a {
        for (j, token_b) in b.iter().enumerate() {
            current[j + 1] = if token_a == token_b {
                prev[j] + 1
            } else {
                current[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

/// ROUGE-L: longest common subsequence over token sequences. Same
/// empty-side conventions as [`rouge_n`].
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let cand_tokens = tokenize_for_rouge(candidate);
    let ref_tokens = tokenize_for_rouge(reference);
    if cand_tokens.is_empty() && ref_tokens.is_empty() {
        return RougeScore::perfect();
    }
    if cand_tokens.is_empty() || ref_tokens.is_empty() {
        return RougeScore::zero();
    }
    let lcs = lcs_length(&cand_tokens, &ref_tokens) as f64;
    RougeScore::from_pr(
        lcs / cand_tokens.len() as f64,
        lcs / ref_tokens.len() as f64,
    )
}

/// Macro average of per-pair scores: each component is averaged
/// arithmetically over the records.
pub fn aggregate_rouge(
    pairs: &[(String, String)],
    variant: RougeVariant,
) -> Result<RougeScore, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sum = RougeScore::zero();
    for (candidate, reference) in pairs {
        let score = match variant {
            RougeVariant::N(n) => rouge_n(candidate, reference, n)?,
            RougeVariant::Lcs => rouge_l(candidate, reference),
        };
        sum.precision += score.precision;
        sum.recall += score.recall;
        sum.f1 += score.f1;
    }
    let n = pairs.len() as f64;
    Ok(RougeScore {
        precision: sum.precision / n,
        recall: sum.recall / n,
        f1: sum.f1 / n,
    })
}

/// Composite overall score: the arithmetic mean of micro F1 and ROUGE-1 F.
pub fn overall_score(micro_f1: f64, rouge1_f1: f64) -> Result<f64, MetricsError> {
    for (name, value) in [("micro_f1", micro_f1), ("rouge1_f1", rouge1_f1)] {
        if !(0.0..=1.0).contains(&value) || value.is_nan() {
            return Err(MetricsError::OutOfRange { name, value });
        }
    }
    Ok((micro_f1 + rouge1_f1) / 2.0)
}

fn per_class_stats(matrix: &ConfusionMatrix) -> BTreeMap<Label, ClassStats> {
    Label::ALL
        .iter()
        .map(|&label| {
            let tp = matrix.count(label, label) as f64;
            let predicted = matrix.col_sum(label) as f64;
            let actual = matrix.row_sum(label) as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (
                label,
                ClassStats {
                    precision,
                    recall,
                    f1,
                },
            )
        })
        .collect()
}

/// Join parsed predictions with gold records by id and assemble the full
/// report. Every gold record must have exactly one prediction and every
/// prediction must match a gold record.
pub fn evaluate_run(
    parsed: &[ParsedPrediction],
    golds: &[ClaimRecord],
) -> Result<EvaluationReport, MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut by_id: HashMap<&str, &ParsedPrediction> = HashMap::new();
    for prediction in parsed {
        if by_id
            .insert(prediction.record_id.as_str(), prediction)
            .is_some()
        {
            return Err(MetricsError::DuplicatePrediction(
                prediction.record_id.clone(),
            ));
        }
    }

    let mut pred_labels = Vec::with_capacity(golds.len());
    let mut gold_labels = Vec::with_capacity(golds.len());
    let mut pairs = Vec::with_capacity(golds.len());
    let mut failed = 0usize;
    for gold in golds {
        let prediction = by_id
            .remove(gold.id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(gold.id.clone()))?;
        let gold_label = gold
            .label
            .ok_or_else(|| MetricsError::UnlabeledGold(gold.id.clone()))?;
        pred_labels.push(prediction.label);
        gold_labels.push(gold_label);
        pairs.push((prediction.explanation.clone(), gold.explanation.clone()));
        if prediction.parse_status == ParseStatus::Failed {
            failed += 1;
        }
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(MetricsError::UnknownPrediction(extra.to_string()));
    }

    let micro = micro_f1(&pred_labels, &gold_labels)?;
    let confusion = confusion_matrix(&pred_labels, &gold_labels)?;
    let per_class = per_class_stats(&confusion);
    let rouge1 = aggregate_rouge(&pairs, RougeVariant::N(1))?;
    let rouge2 = aggregate_rouge(&pairs, RougeVariant::N(2))?;
    let rouge_l_score = aggregate_rouge(&pairs, RougeVariant::Lcs)?;
    let overall = overall_score(micro, rouge1.f1)?;

    Ok(EvaluationReport {
        name: default_run_name(),
        record_count: golds.len(),
        micro_f1: micro,
        per_class,
        confusion,
        rouge1,
        rouge2,
        rouge_l: rouge_l_score,
        overall,
        failed_parse_rate: failed as f64 / golds.len() as f64,
    })
}
