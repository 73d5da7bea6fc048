//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS line with the measured detail (visible with `--nocapture`).

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::synthetic_corpus;
use fmd_core::backend::{MemorizingBackend, RecordingBackend};
use fmd_core::dataset::{class_distribution, load_dataset, save_jsonl, DataFormat, Label};
use fmd_core::inference::{parse_response, ParseStatus};
use fmd_core::metrics::{micro_f1, overall_score, rouge_l, rouge_n, tokenize_for_rouge};
use fmd_core::orchestrator::{plan_schedule, run_schedule};
use fmd_core::prompts::{render_prompt, PromptKind};

fn pass(criterion: &str, detail: impl std::fmt::Display) {
    println!("[PASS] {criterion}: {detail}");
}

fn fmd_binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fmd"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("command runs");
    assert!(
        output.status.success(),
        "command {:?} failed with {:?}\nstdout: {}\nstderr: {}",
        cmd,
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

// ---------------------------------------------------------------------------
// Criterion: split exactness on the official class totals, under one second.
// ---------------------------------------------------------------------------
#[test]
fn split_exactness_reproduces_benchmark_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("claims.jsonl");
    let records = synthetic_corpus(892, 717, 344);
    save_jsonl(&records, &data).unwrap();
    let out = dir.path().join("prep");

    let started = Instant::now();
    run_ok(
        fmd_binary()
            .arg("prepare")
            .arg("--data")
            .arg(&data)
            .arg("--dev-count")
            .arg("453")
            .arg("--seed")
            .arg("11")
            .arg("--out")
            .arg(&out),
    );
    let elapsed = started.elapsed();

    let expected: BTreeMap<Label, (usize, usize)> = BTreeMap::from([
        (Label::False, (696, 196)),
        (Label::True, (542, 175)),
        (Label::Nei, (262, 82)),
    ]);

    // manifest records the per-class counts
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("split-manifest.json")).unwrap())
            .unwrap();
    for (label, (train_n, dev_n)) in &expected {
        let entry = &manifest["per_class"][label.token()];
        assert_eq!(
            entry["train"].as_u64().unwrap() as usize,
            *train_n,
            "{label} train"
        );
        assert_eq!(
            entry["dev"].as_u64().unwrap() as usize,
            *dev_n,
            "{label} dev"
        );
    }

    // emitted files agree (originals only; augmentation adds flagged records)
    let train = load_dataset(&out.join("train.jsonl"), DataFormat::JsonLines).unwrap();
    let originals: Vec<_> = train.iter().filter(|r| !r.is_augmented).cloned().collect();
    let dev = load_dataset(&out.join("dev.jsonl"), DataFormat::JsonLines).unwrap();
    let train_counts = class_distribution(&originals).unwrap();
    let dev_counts = class_distribution(&dev).unwrap();
    for (label, (train_n, dev_n)) in &expected {
        assert_eq!(train_counts[label], *train_n, "{label} train in file");
        assert_eq!(dev_counts[label], *dev_n, "{label} dev in file");
    }
    assert_eq!(originals.len(), 1500);
    assert_eq!(dev.len(), 453);

    assert!(
        elapsed < Duration::from_secs(1),
        "prepare took {elapsed:?}, budget is 1s"
    );
    pass(
        "split exactness",
        format!("per-class (train, dev) = (696,196)/(542,175)/(262,82) in {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion: overall score reproduces the six benchmark leaderboard rows.
// ---------------------------------------------------------------------------
#[test]
fn overall_score_reproduces_leaderboard_rows() {
    let rows = [
        // dev leaderboard
        (0.7837, 0.6710, 0.7274),
        (0.8322, 0.6710, 0.7516),
        (0.8234, 0.6871, 0.7552),
        (0.8366, 0.7170, 0.7768),
        // test leaderboard
        (0.8165, 0.6337, 0.7251),
        (0.8283, 0.7253, 0.7768),
    ];
    // 5e-5 is the table rounding tolerance; the 1e-12 term only absorbs
    // binary float representation error on rows that sit exactly at the
    // rounding boundary.
    let tolerance = 5.0e-5 + 1e-12;
    let mut worst = 0.0f64;
    for (f1, r1, published) in rows {
        let got = overall_score(f1, r1).unwrap();
        let diff = (got - published).abs();
        worst = worst.max(diff);
        assert!(
            diff <= tolerance,
            "({f1}, {r1}) -> {got}, published {published}, diff {diff:e}"
        );
    }
    pass(
        "overall-score reproduction",
        format!("6/6 rows within 5e-5 (worst diff {worst:.2e})"),
    );
}

// ---------------------------------------------------------------------------
// Criterion: ROUGE matches brute-force oracles on randomized pairs.
// ---------------------------------------------------------------------------

/// Independent tokenizer applying the stated rule directly.
fn oracle_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Brute-force clipped n-gram multiset intersection.
fn oracle_rouge_n(candidate: &str, reference: &str, n: usize) -> (f64, f64, f64) {
    let cand = oracle_tokens(candidate);
    let reference = oracle_tokens(reference);
    let grams = |tokens: &[String]| -> Vec<Vec<String>> {
        if tokens.len() < n {
            Vec::new()
        } else {
            tokens.windows(n).map(|w| w.to_vec()).collect()
        }
    };
    let cand_grams = grams(&cand);
    let ref_grams = grams(&reference);
    if cand_grams.is_empty() && ref_grams.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    if cand_grams.is_empty() || ref_grams.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut ref_counts: BTreeMap<&[String], usize> = BTreeMap::new();
    for gram in &ref_grams {
        *ref_counts.entry(gram.as_slice()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for gram in &cand_grams {
        if let Some(count) = ref_counts.get_mut(gram.as_slice()) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    let precision = overlap as f64 / cand_grams.len() as f64;
    let recall = overlap as f64 / ref_grams.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

fn is_subsequence(needle: &[String], haystack: &[String]) -> bool {
    let mut it = haystack.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Exhaustive LCS: enumerate every candidate subsequence by bitmask.
fn oracle_lcs(candidate: &[String], reference: &[String]) -> usize {
    let n = candidate.len();
    assert!(n <= 16, "exhaustive oracle only for short sequences");
    let mut best = 0usize;
    for mask in 0u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let sub: Vec<String> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| candidate[i].clone())
            .collect();
        if is_subsequence(&sub, reference) {
            best = size;
        }
    }
    best
}

fn oracle_rouge_l(candidate: &str, reference: &str) -> (f64, f64, f64) {
    let cand = oracle_tokens(candidate);
    let reference = oracle_tokens(reference);
    if cand.is_empty() && reference.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    if cand.is_empty() || reference.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let lcs = oracle_lcs(&cand, &reference) as f64;
    let precision = lcs / cand.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

fn random_text(rng: &mut ChaCha8Rng, max_tokens: usize) -> String {
    const ALPHABET: [&str; 5] = ["a", "b", "c", "d", "e"];
    let len = rng.gen_range(0..=max_tokens);
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn rouge_matches_brute_force_oracles() {
    const EPS: f64 = 1e-12;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut checks = 0usize;
    for _ in 0..1000 {
        let candidate = random_text(&mut rng, 12);
        let reference = random_text(&mut rng, 12);
        for n in 1..=3 {
            let got = rouge_n(&candidate, &reference, n).unwrap();
            let (p, r, f1) = oracle_rouge_n(&candidate, &reference, n);
            assert!(
                (got.precision - p).abs() <= EPS
                    && (got.recall - r).abs() <= EPS
                    && (got.f1 - f1).abs() <= EPS,
                "rouge-{n} mismatch on ({candidate:?}, {reference:?}): got {got:?}, oracle ({p}, {r}, {f1})"
            );
            checks += 1;
        }

        let candidate_short = random_text(&mut rng, 10);
        let reference_short = random_text(&mut rng, 10);
        let got = rouge_l(&candidate_short, &reference_short);
        let (p, r, f1) = oracle_rouge_l(&candidate_short, &reference_short);
        assert!(
            (got.precision - p).abs() <= EPS
                && (got.recall - r).abs() <= EPS
                && (got.f1 - f1).abs() <= EPS,
            "rouge-l mismatch on ({candidate_short:?}, {reference_short:?}): got {got:?}, oracle ({p}, {r}, {f1})"
        );
        checks += 1;

        // the tokenizer itself must agree with the independent restatement
        assert_eq!(tokenize_for_rouge(&candidate), oracle_tokens(&candidate));
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(30),
        "oracle comparison took {elapsed:?}, budget is 30s"
    );
    pass(
        "ROUGE oracle equivalence",
        format!("{checks} randomized comparisons in {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion: micro F1 equals accuracy on random single-label vectors.
// ---------------------------------------------------------------------------
#[test]
fn micro_f1_equals_accuracy_on_random_vectors() {
    const EPS: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let len = rng.gen_range(1..=200);
        let random_label = |rng: &mut ChaCha8Rng| {
            Label::from_code(rng.gen_range(0..3u8)).expect("codes 0..3 are valid")
        };
        let preds: Vec<Label> = (0..len).map(|_| random_label(&mut rng)).collect();
        let golds: Vec<Label> = (0..len).map(|_| random_label(&mut rng)).collect();
        let correct = preds.iter().zip(&golds).filter(|(p, g)| p == g).count();
        let accuracy = correct as f64 / len as f64;
        let f1 = micro_f1(&preds, &golds).unwrap();
        assert!(
            (f1 - accuracy).abs() <= EPS,
            "micro F1 {f1} != accuracy {accuracy} on length {len}"
        );
    }
    pass("micro-F1 ≡ accuracy", "1000 random vectors, diff ≤ 1e-12");
}

// ---------------------------------------------------------------------------
// Criterion: render joint targets, parse them back, recover exactly.
// ---------------------------------------------------------------------------
#[test]
fn prompt_parse_roundtrip_is_clean_for_synthetic_corpus() {
    let records = synthetic_corpus(70, 70, 60);
    assert_eq!(records.len(), 200);
    let mut clean = 0usize;
    for record in &records {
        let prompt = render_prompt(record, PromptKind::Joint, true).unwrap();
        let parsed = parse_response(&prompt.target_text);
        assert_eq!(parsed.status, ParseStatus::Clean, "record {}", record.id);
        assert_eq!(parsed.label, record.label.unwrap(), "record {}", record.id);
        assert_eq!(
            parsed.explanation, record.explanation,
            "record {}",
            record.id
        );
        clean += 1;
    }
    pass(
        "prompt/parse round-trip",
        format!("{clean}/200 joint targets parsed clean with exact recovery"),
    );
}

// ---------------------------------------------------------------------------
// Criterion: the seqwen preset issues exactly the published stage sequence.
// ---------------------------------------------------------------------------
#[test]
fn seqwen_schedule_contract_holds() {
    let records = synthetic_corpus(6, 5, 4);
    let mut backend = RecordingBackend::new(MemorizingBackend);
    let plan = plan_schedule("seqwen").unwrap();
    let artifact = run_schedule(&plan, &records, &mut backend, 3, None).unwrap();

    assert_eq!(backend.calls.len(), 2, "exactly two train calls");
    let first = &backend.calls[0];
    let second = &backend.calls[1];
    assert_eq!(first.prompt_kind, PromptKind::ClassificationOnly);
    assert_eq!(first.epochs, 3);
    assert!(first
        .example_targets
        .iter()
        .all(|t| matches!(t.as_str(), "true" | "false" | "not_enough_info")));
    assert_eq!(second.prompt_kind, PromptKind::Joint);
    assert_eq!(second.epochs, 5);
    assert!(second
        .example_targets
        .iter()
        .all(|t| t.starts_with("Prediction: ") && t.contains(" Explanation: ")));
    assert_eq!(
        second.init_weights_id, first.output_weights_id,
        "stage 2 must initialize from stage 1's output"
    );
    assert_eq!(artifact.manifest.total_epochs, 8);
    pass(
        "schedule contract",
        "seqwen = (classification_only, 3) then (joint, 5), chained, 8 manifest epochs",
    );
}

// ---------------------------------------------------------------------------
// Criterion: full prepare → train → infer → score through the binary.
// ---------------------------------------------------------------------------
#[test]
fn end_to_end_smoke_pipeline() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("claims.jsonl");
    save_jsonl(&synthetic_corpus(20, 18, 12), &data).unwrap();
    let prep = dir.path().join("prep");
    let model = dir.path().join("model");
    let pred = dir.path().join("pred.jsonl");
    let report_path = dir.path().join("report.json");

    run_ok(
        fmd_binary()
            .arg("prepare")
            .arg("--data")
            .arg(&data)
            .arg("--dev-count")
            .arg("10")
            .arg("--seed")
            .arg("7")
            .arg("--out")
            .arg(&prep),
    );
    run_ok(
        fmd_binary()
            .arg("train")
            .arg("--data")
            .arg(prep.join("train.jsonl"))
            .arg("--plan")
            .arg("seqwen")
            .arg("--backend")
            .arg("mock")
            .arg("--seed")
            .arg("7")
            .arg("--out")
            .arg(&model),
    );
    run_ok(
        fmd_binary()
            .arg("infer")
            .arg("--model")
            .arg(&model)
            .arg("--data")
            .arg(prep.join("dev.jsonl"))
            .arg("--out")
            .arg(&pred),
    );
    let score_stdout = run_ok(
        fmd_binary()
            .arg("score")
            .arg("--pred")
            .arg(&pred)
            .arg("--gold")
            .arg(prep.join("dev.jsonl"))
            .arg("--name")
            .arg("smoke")
            .arg("--out")
            .arg(&report_path),
    );

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["record_count"].as_u64(), Some(10));
    for field in ["micro_f1", "overall", "failed_parse_rate"] {
        let value = report[field].as_f64().unwrap_or(-1.0);
        assert!((0.0..=1.0).contains(&value), "{field} = {value}");
    }
    for rouge in ["rouge1", "rouge2", "rouge_l"] {
        for component in ["precision", "recall", "f1"] {
            let value = report[rouge][component].as_f64().unwrap_or(-1.0);
            assert!(
                (0.0..=1.0).contains(&value),
                "{rouge}.{component} = {value}"
            );
        }
    }
    for label in ["false", "true", "not_enough_info"] {
        assert!(report["per_class"][label]["f1"].as_f64().is_some());
    }
    let confusion_total: u64 = report["confusion"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|row| row.as_array().unwrap().iter())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(confusion_total, 10);

    // the experiment manifest ties the run together and references the report
    let experiment: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("pred.experiment.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(experiment["plan"]["name"], "seqwen");
    assert_eq!(experiment["backend"], "mock");
    assert_eq!(experiment["split_seed"], 7);
    assert_eq!(experiment["generation"]["max_new_tokens"], 512);
    assert!(experiment["dataset_checksum"].as_str().unwrap().len() == 64);
    assert!(experiment["report"]
        .as_str()
        .unwrap()
        .ends_with("report.json"));

    // markdown row in the published column order
    assert!(
        score_stdout.contains("| Run | Micro F1 | ROUGE-1 | ROUGE-2 | ROUGE-L | Overall Score |")
    );
    let row_pattern = regex_lite_row("smoke");
    assert!(
        score_stdout.lines().any(row_pattern),
        "no markdown row for `smoke` in:\n{score_stdout}"
    );

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(300),
        "pipeline took {elapsed:?}, budget is 5 minutes"
    );
    pass(
        "end-to-end smoke",
        format!("prepare→train→infer→score on 50 records in {elapsed:?}"),
    );
}

/// Matches `| name | 0.#### | 0.#### | 0.#### | 0.#### | 0.#### |`.
fn regex_lite_row(name: &'static str) -> impl Fn(&str) -> bool {
    move |line: &str| {
        let mut parts = line.split('|').map(str::trim);
        let Some("") = parts.next() else { return false };
        if parts.next() != Some(name) {
            return false;
        }
        let mut cells = 0;
        for part in parts.by_ref().take(5) {
            if part.len() != 6 || !part.starts_with("0.") && !part.starts_with("1.") {
                return false;
            }
            if part[2..].chars().filter(|c| c.is_ascii_digit()).count() != 4 {
                return false;
            }
            cells += 1;
        }
        cells == 5
    }
}

// ---------------------------------------------------------------------------
// Criterion: the parser is total over arbitrary bytes and unicode.
// ---------------------------------------------------------------------------
#[test]
fn parser_totality_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFACADE);
    let pieces = [
        "Prediction:",
        "Explanation:",
        "prediction",
        "true",
        "false",
        "NEI",
        "not_enough_info",
        "1",
        "2",
        "3",
        "\n",
        "\t",
        ":",
        ".",
        "…",
        "∀",
        "疑",
        "🜚",
    ];
    let mut counts = [0usize; 3];
    for i in 0..10_000 {
        let raw: String = match i % 3 {
            0 => {
                // raw bytes, lossily decoded
                let len = rng.gen_range(0..64);
                let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            1 => {
                // random scalar values
                let len = rng.gen_range(0..32);
                (0..len)
                    .filter_map(|_| char::from_u32(rng.gen_range(0..0x11_0000)))
                    .collect()
            }
            _ => {
                // splices of plausible response fragments
                let len = rng.gen_range(0..12);
                (0..len)
                    .map(|_| pieces[rng.gen_range(0..pieces.len())])
                    .collect::<Vec<_>>()
                    .join(if rng.gen_bool(0.5) { " " } else { "" })
            }
        };
        let parsed = parse_response(&raw);
        match parsed.status {
            ParseStatus::Clean => counts[0] += 1,
            ParseStatus::Fallback => counts[1] += 1,
            ParseStatus::Failed => {
                counts[2] += 1;
                assert_eq!(parsed.label, fmd_core::inference::FALLBACK_LABEL);
                assert!(parsed.explanation.is_empty());
            }
        }
    }
    assert_eq!(counts.iter().sum::<usize>(), 10_000);
    pass(
        "parser totality fuzz",
        format!(
            "10000 strings parsed without panic (clean {}, fallback {}, failed {})",
            counts[0], counts[1], counts[2]
        ),
    );
}
