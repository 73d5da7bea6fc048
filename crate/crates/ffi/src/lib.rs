//! C ABI over the pipeline's pure pieces: the label codec, prompt
//! rendering, response parsing, and the evaluation metrics. This is what a
//! non-Rust training stack links against to stay byte-compatible with the
//! canonical templates and scoring.
//!
//! Conventions:
//! - strings cross the boundary as NUL-terminated UTF-8;
//! - labels cross as integer codes (0 false, 1 true, 2 nei, -1 none);
//! - fallible calls return [`FmdStatus`] and write results to out-pointers;
//! - handles (`FmdParsed`, `FmdPrompt`, `FmdEvaluator`) are opaque and must
//!   be released with their matching `_free` function;
//! - strings returned through `*mut c_char` out-pointers are owned by the
//!   caller and released with [`fmd_string_free`]; strings returned as
//!   `*const c_char` from handle getters borrow from the handle.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use fmd_core::dataset::{ClaimRecord, Label};
use fmd_core::inference::{parse_response, ParseStatus, ParsedPrediction};
use fmd_core::metrics::{evaluate_run, micro_f1, overall_score, rouge_l, rouge_n};
use fmd_core::prompts::{decode_label, render_prompt, PromptKind};

/// Status codes returned by fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidLabel = 3,
    InvalidArgument = 4,
    LengthMismatch = 5,
    EmptyInput = 6,
    RenderFailed = 7,
}

/// Precision / recall / F1 triple for one ROUGE variant.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FmdRouge {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Opaque parsed-prediction handle.
pub struct FmdParsed {
    label: Label,
    status: ParseStatus,
    explanation: CString,
}

/// Opaque rendered-prompt handle.
pub struct FmdPrompt {
    input: CString,
    target: CString,
}

/// Opaque evaluation session accumulating (gold, prediction) rows.
#[derive(Default)]
pub struct FmdEvaluator {
    golds: Vec<ClaimRecord>,
    predictions: Vec<ParsedPrediction>,
}

fn label_from_code(code: i32) -> Option<Label> {
    u8::try_from(code).ok().and_then(Label::from_code)
}

fn parse_status_code(status: ParseStatus) -> i32 {
    match status {
        ParseStatus::Clean => 0,
        ParseStatus::Fallback => 1,
        ParseStatus::Failed => 2,
    }
}

/// Interior NULs cannot appear in strings that entered through the C
/// boundary, but synthesized text is sanitized anyway.
fn to_cstring(text: &str) -> CString {
    CString::new(text)
        .unwrap_or_else(|_| CString::new(text.replace('\0', " ")).expect("NUL stripped"))
}

unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, FmdStatus> {
    if ptr.is_null() {
        return Err(FmdStatus::NullArgument);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| FmdStatus::InvalidUtf8)
}

/// Crate version as a static string; do not free.
#[no_mangle]
pub extern "C" fn fmd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Canonical token for a label code as a static string; NULL for an unknown
/// code. Do not free.
#[no_mangle]
pub extern "C" fn fmd_label_encode(label_code: i32) -> *const c_char {
    match label_from_code(label_code) {
        Some(Label::False) => c"false".as_ptr(),
        Some(Label::True) => c"true".as_ptr(),
        Some(Label::Nei) => c"not_enough_info".as_ptr(),
        None => ptr::null(),
    }
}

/// Decode a surface token (canonical tokens, NEI aliases, menu digits) into
/// a label code.
///
/// # Safety
/// `token` must be NULL or a valid NUL-terminated string; `out_label` must
/// be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn fmd_label_decode(token: *const c_char, out_label: *mut i32) -> FmdStatus {
    if out_label.is_null() {
        return FmdStatus::NullArgument;
    }
    let token = match utf8_arg(token) {
        Ok(t) => t,
        Err(status) => return status,
    };
    match decode_label(token) {
        Some(label) => {
            *out_label = i32::from(label.code());
            FmdStatus::Ok
        }
        None => FmdStatus::InvalidLabel,
    }
}

/// Parse a raw completion. Never fails for valid UTF-8 input: malformed
/// text comes back with parse status 2 (failed) and the fallback label.
/// Returns NULL only for a NULL or non-UTF-8 argument. Free with
/// [`fmd_parsed_free`].
///
/// # Safety
/// `raw` must be NULL or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fmd_parse_response(raw: *const c_char) -> *mut FmdParsed {
    let Ok(raw) = utf8_arg(raw) else {
        return ptr::null_mut();
    };
    let parsed = parse_response(raw);
    Box::into_raw(Box::new(FmdParsed {
        label: parsed.label,
        status: parsed.status,
        explanation: to_cstring(&parsed.explanation),
    }))
}

/// Label code of a parsed prediction; -1 for NULL.
///
/// # Safety
/// `parsed` must be NULL or a pointer from [`fmd_parse_response`].
#[no_mangle]
pub unsafe extern "C" fn fmd_parsed_label(parsed: *const FmdParsed) -> i32 {
    if parsed.is_null() {
        return -1;
    }
    i32::from((*parsed).label.code())
}

/// Parse status (0 clean, 1 fallback, 2 failed); -1 for NULL.
///
/// # Safety
/// `parsed` must be NULL or a pointer from [`fmd_parse_response`].
#[no_mangle]
pub unsafe extern "C" fn fmd_parsed_status(parsed: *const FmdParsed) -> i32 {
    if parsed.is_null() {
        return -1;
    }
    parse_status_code((*parsed).status)
}

/// Explanation text, borrowed from the handle; NULL for NULL input.
///
/// # Safety
/// `parsed` must be NULL or a pointer from [`fmd_parse_response`]; the
/// returned pointer is valid until [`fmd_parsed_free`].
#[no_mangle]
pub unsafe extern "C" fn fmd_parsed_explanation(parsed: *const FmdParsed) -> *const c_char {
    if parsed.is_null() {
        return ptr::null();
    }
    (*parsed).explanation.as_ptr()
}

/// Release a parsed-prediction handle. NULL is a no-op.
///
/// # Safety
/// `parsed` must be NULL or a pointer from [`fmd_parse_response`], not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn fmd_parsed_free(parsed: *mut FmdParsed) {
    if !parsed.is_null() {
        drop(Box::from_raw(parsed));
    }
}

/// Render a prompt. `kind` is 0 for classification-only, 1 for joint;
/// `label_code` is -1 when the record is unlabeled; `explanation` may be
/// NULL. On success writes a handle to `out_prompt` (free with
/// [`fmd_prompt_free`]).
///
/// # Safety
/// String arguments must be NULL or valid NUL-terminated strings;
/// `out_prompt` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmd_render_prompt(
    claim: *const c_char,
    justification: *const c_char,
    explanation: *const c_char,
    label_code: i32,
    kind: i32,
    include_target: bool,
    out_prompt: *mut *mut FmdPrompt,
) -> FmdStatus {
    if out_prompt.is_null() {
        return FmdStatus::NullArgument;
    }
    let claim = match utf8_arg(claim) {
        Ok(c) => c,
        Err(status) => return status,
    };
    let justification = if justification.is_null() {
        ""
    } else {
        match utf8_arg(justification) {
            Ok(j) => j,
            Err(status) => return status,
        }
    };
    let explanation = if explanation.is_null() {
        ""
    } else {
        match utf8_arg(explanation) {
            Ok(e) => e,
            Err(status) => return status,
        }
    };
    let label = if label_code == -1 {
        None
    } else {
        match label_from_code(label_code) {
            Some(label) => Some(label),
            None => return FmdStatus::InvalidLabel,
        }
    };
    let kind = match kind {
        0 => PromptKind::ClassificationOnly,
        1 => PromptKind::Joint,
        _ => return FmdStatus::InvalidArgument,
    };

    let record = ClaimRecord {
        id: String::from("ffi"),
        claim: claim.to_string(),
        justification: justification.to_string(),
        explanation: explanation.to_string(),
        label,
        sector: None,
        is_augmented: false,
        parent_id: None,
    };
    match render_prompt(&record, kind, include_target) {
        Ok(prompt) => {
            *out_prompt = Box::into_raw(Box::new(FmdPrompt {
                input: to_cstring(&prompt.input_text),
                target: to_cstring(&prompt.target_text),
            }));
            FmdStatus::Ok
        }
        Err(_) => FmdStatus::RenderFailed,
    }
}

/// Rendered input text, borrowed from the handle.
///
/// # Safety
/// `prompt` must be NULL or a pointer from [`fmd_render_prompt`]; the
/// returned pointer is valid until [`fmd_prompt_free`].
#[no_mangle]
pub unsafe extern "C" fn fmd_prompt_input(prompt: *const FmdPrompt) -> *const c_char {
    if prompt.is_null() {
        return ptr::null();
    }
    (*prompt).input.as_ptr()
}

/// Rendered training target (empty for inference prompts), borrowed from
/// the handle.
///
/// # Safety
/// `prompt` must be NULL or a pointer from [`fmd_render_prompt`]; the
/// returned pointer is valid until [`fmd_prompt_free`].
#[no_mangle]
pub unsafe extern "C" fn fmd_prompt_target(prompt: *const FmdPrompt) -> *const c_char {
    if prompt.is_null() {
        return ptr::null();
    }
    (*prompt).target.as_ptr()
}

/// Release a prompt handle. NULL is a no-op.
///
/// # Safety
/// `prompt` must be NULL or a pointer from [`fmd_render_prompt`], not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn fmd_prompt_free(prompt: *mut FmdPrompt) {
    if !prompt.is_null() {
        drop(Box::from_raw(prompt));
    }
}

unsafe fn rouge_args<'a>(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut FmdRouge,
) -> Result<(&'a str, &'a str), FmdStatus> {
    if out.is_null() {
        return Err(FmdStatus::NullArgument);
    }
    Ok((utf8_arg(candidate)?, utf8_arg(reference)?))
}

/// ROUGE-N between two texts; `n` must be at least 1.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fmd_rouge_n(
    candidate: *const c_char,
    reference: *const c_char,
    n: u32,
    out: *mut FmdRouge,
) -> FmdStatus {
    let (candidate, reference) = match rouge_args(candidate, reference, out) {
        Ok(args) => args,
        Err(status) => return status,
    };
    match rouge_n(candidate, reference, n as usize) {
        Ok(score) => {
            *out = FmdRouge {
                precision: score.precision,
                recall: score.recall,
                f1: score.f1,
            };
            FmdStatus::Ok
        }
        Err(_) => FmdStatus::InvalidArgument,
    }
}

/// ROUGE-L between two texts.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fmd_rouge_l(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut FmdRouge,
) -> FmdStatus {
    let (candidate, reference) = match rouge_args(candidate, reference, out) {
        Ok(args) => args,
        Err(status) => return status,
    };
    let score = rouge_l(candidate, reference);
    *out = FmdRouge {
        precision: score.precision,
        recall: score.recall,
        f1: score.f1,
    };
    FmdStatus::Ok
}

/// Micro-averaged F1 over parallel arrays of label codes.
///
/// # Safety
/// `predictions` and `golds` must point to `len` readable i32 values; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmd_micro_f1(
    predictions: *const i32,
    golds: *const i32,
    len: usize,
    out: *mut f64,
) -> FmdStatus {
    if predictions.is_null() || golds.is_null() || out.is_null() {
        return FmdStatus::NullArgument;
    }
    if len == 0 {
        return FmdStatus::EmptyInput;
    }
    let mut pred_labels = Vec::with_capacity(len);
    let mut gold_labels = Vec::with_capacity(len);
    for i in 0..len {
        let Some(pred) = label_from_code(*predictions.add(i)) else {
            return FmdStatus::InvalidLabel;
        };
        let Some(gold) = label_from_code(*golds.add(i)) else {
            return FmdStatus::InvalidLabel;
        };
        pred_labels.push(pred);
        gold_labels.push(gold);
    }
    match micro_f1(&pred_labels, &gold_labels) {
        Ok(value) => {
            *out = value;
            FmdStatus::Ok
        }
        Err(_) => FmdStatus::LengthMismatch,
    }
}

/// Composite overall score: arithmetic mean of micro F1 and ROUGE-1 F.
/// Inputs must lie in [0, 1].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmd_overall_score(
    micro_f1_value: f64,
    rouge1_f1: f64,
    out: *mut f64,
) -> FmdStatus {
    if out.is_null() {
        return FmdStatus::NullArgument;
    }
    match overall_score(micro_f1_value, rouge1_f1) {
        Ok(value) => {
            *out = value;
            FmdStatus::Ok
        }
        Err(_) => FmdStatus::InvalidArgument,
    }
}

/// New empty evaluation session. Free with [`fmd_eval_free`].
#[no_mangle]
pub extern "C" fn fmd_eval_new() -> *mut FmdEvaluator {
    Box::into_raw(Box::new(FmdEvaluator::default()))
}

/// Append one scored row: gold and predicted label codes, the candidate
/// explanation, the gold reference explanation, and the parse status code
/// (0 clean, 1 fallback, 2 failed). NULL explanations count as empty.
///
/// # Safety
/// `eval` must come from [`fmd_eval_new`]; string arguments must be NULL or
/// valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fmd_eval_add(
    eval: *mut FmdEvaluator,
    gold_label: i32,
    predicted_label: i32,
    candidate: *const c_char,
    reference: *const c_char,
    parse_status: i32,
) -> FmdStatus {
    if eval.is_null() {
        return FmdStatus::NullArgument;
    }
    let (Some(gold), Some(predicted)) = (
        label_from_code(gold_label),
        label_from_code(predicted_label),
    ) else {
        return FmdStatus::InvalidLabel;
    };
    let status = match parse_status {
        0 => ParseStatus::Clean,
        1 => ParseStatus::Fallback,
        2 => ParseStatus::Failed,
        _ => return FmdStatus::InvalidArgument,
    };
    let candidate = if candidate.is_null() {
        ""
    } else {
        match utf8_arg(candidate) {
            Ok(c) => c,
            Err(s) => return s,
        }
    };
    let reference = if reference.is_null() {
        ""
    } else {
        match utf8_arg(reference) {
            Ok(r) => r,
            Err(s) => return s,
        }
    };

    let eval = &mut *eval;
    let id = format!("r{}", eval.golds.len());
    eval.golds.push(ClaimRecord {
        id: id.clone(),
        claim: String::from("-"),
        justification: String::new(),
        explanation: reference.to_string(),
        label: Some(gold),
        sector: None,
        is_augmented: false,
        parent_id: None,
    });
    eval.predictions.push(ParsedPrediction {
        record_id: id,
        label: predicted,
        explanation: candidate.to_string(),
        parse_status: status,
        raw_text: String::new(),
    });
    FmdStatus::Ok
}

/// Compute the full evaluation report over the accumulated rows and write
/// it as a json document to `out_json` (free with [`fmd_string_free`]).
/// The session stays valid and can keep accumulating.
///
/// # Safety
/// `eval` must come from [`fmd_eval_new`]; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmd_eval_finish_json(
    eval: *const FmdEvaluator,
    out_json: *mut *mut c_char,
) -> FmdStatus {
    if eval.is_null() || out_json.is_null() {
        return FmdStatus::NullArgument;
    }
    let eval = &*eval;
    if eval.golds.is_empty() {
        return FmdStatus::EmptyInput;
    }
    match evaluate_run(&eval.predictions, &eval.golds) {
        Ok(report) => match serde_json::to_string_pretty(&report) {
            Ok(json) => {
                *out_json = to_cstring(&json).into_raw();
                FmdStatus::Ok
            }
            Err(_) => FmdStatus::InvalidArgument,
        },
        Err(_) => FmdStatus::InvalidArgument,
    }
}

/// Release an evaluation session. NULL is a no-op.
///
/// # Safety
/// `eval` must be NULL or a pointer from [`fmd_eval_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fmd_eval_free(eval: *mut FmdEvaluator) {
    if !eval.is_null() {
        drop(Box::from_raw(eval));
    }
}

/// Release a string returned through an out-pointer. NULL is a no-op.
///
/// # Safety
/// `s` must be NULL or a string allocated by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fmd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
