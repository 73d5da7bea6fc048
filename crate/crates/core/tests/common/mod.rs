//! Shared helpers for integration tests: deterministic synthetic corpora.

use fmd_core::dataset::{ClaimRecord, Label, Sector};

const ADJECTIVES: [&str; 7] = [
    "steady",
    "sharp",
    "modest",
    "record",
    "unexpected",
    "gradual",
    "marginal",
];
const METRICS: [&str; 6] = [
    "revenue",
    "debt",
    "profit",
    "tax intake",
    "budget deficit",
    "income",
];
const VERBS: [&str; 5] = ["confirmed", "disputed", "audited", "restated", "flagged"];
const VERDICTS: [&str; 3] = ["supports", "contradicts", "neither confirms nor denies"];
const SECTORS: [Sector; 7] = [
    Sector::Income,
    Sector::ProfitAndLoss,
    Sector::Economy,
    Sector::Budget,
    Sector::Taxes,
    Sector::Debt,
    Sector::Other,
];

/// One deterministic synthetic record; `index` drives all the variation.
pub fn synthetic_record(index: usize, label: Label) -> ClaimRecord {
    let adjective = ADJECTIVES[index % ADJECTIVES.len()];
    let metric = METRICS[index % METRICS.len()];
    let verb = VERBS[index % VERBS.len()];
    let verdict = VERDICTS[label.code() as usize];
    let year = 2015 + (index % 9);
    ClaimRecord {
        id: format!("{}-{index}", label.token()),
        claim: format!("Company {index} reported {adjective} {metric} growth during fiscal {year}."),
        justification: format!(
            "The audited filing for {year} shows {metric} moving in a {adjective} pattern. Independent reviewers {verb} the reported figure."
        ),
        explanation: format!("The {year} filing {verdict} the claim about {metric}."),
        label: Some(label),
        sector: Some(SECTORS[index % SECTORS.len()]),
        is_augmented: false,
        parent_id: None,
    }
}

/// Deterministic corpus with the requested per-class counts.
pub fn synthetic_corpus(n_false: usize, n_true: usize, n_nei: usize) -> Vec<ClaimRecord> {
    let mut out = Vec::with_capacity(n_false + n_true + n_nei);
    let mut index = 0;
    for (label, n) in [
        (Label::False, n_false),
        (Label::True, n_true),
        (Label::Nei, n_nei),
    ] {
        for _ in 0..n {
            out.push(synthetic_record(index, label));
            index += 1;
        }
    }
    out
}
