/* C interface to the financial misinformation detection pipeline. */

#ifndef FMD_FFI_H
#define FMD_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by fallible calls.
typedef enum FmdStatus {
  FMD_STATUS_OK = 0,
  FMD_STATUS_NULL_ARGUMENT = 1,
  FMD_STATUS_INVALID_UTF8 = 2,
  FMD_STATUS_INVALID_LABEL = 3,
  FMD_STATUS_INVALID_ARGUMENT = 4,
  FMD_STATUS_LENGTH_MISMATCH = 5,
  FMD_STATUS_EMPTY_INPUT = 6,
  FMD_STATUS_RENDER_FAILED = 7,
} FmdStatus;

// Opaque evaluation session accumulating (gold, prediction) rows.
typedef struct FmdEvaluator FmdEvaluator;

// Opaque parsed-prediction handle.
typedef struct FmdParsed FmdParsed;

// Opaque rendered-prompt handle.
typedef struct FmdPrompt FmdPrompt;

// Precision / recall / F1 triple for one ROUGE variant.
typedef struct FmdRouge {
  double precision;
  double recall;
  double f1;
} FmdRouge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Crate version as a static string; do not free.
const char *fmd_version(void);

// Canonical token for a label code as a static string; NULL for an unknown
// code. Do not free.
const char *fmd_label_encode(int32_t label_code);

// Decode a surface token (canonical tokens, NEI aliases, menu digits) into
// a label code.
//
// # Safety
// `token` must be NULL or a valid NUL-terminated string; `out_label` must
// be NULL or writable.
enum FmdStatus fmd_label_decode(const char *token, int32_t *out_label);

// Parse a raw completion. Never fails for valid UTF-8 input: malformed
// text comes back with parse status 2 (failed) and the fallback label.
// Returns NULL only for a NULL or non-UTF-8 argument. Free with
// [`fmd_parsed_free`].
//
// # Safety
// `raw` must be NULL or a valid NUL-terminated string.
struct FmdParsed *fmd_parse_response(const char *raw);

// Label code of a parsed prediction; -1 for NULL.
//
// # Safety
// `parsed` must be NULL or a pointer from [`fmd_parse_response`].
int32_t fmd_parsed_label(const struct FmdParsed *parsed);

// Parse status (0 clean, 1 fallback, 2 failed); -1 for NULL.
//
// # Safety
// `parsed` must be NULL or a pointer from [`fmd_parse_response`].
int32_t fmd_parsed_status(const struct FmdParsed *parsed);

// Explanation text, borrowed from the handle; NULL for NULL input.
//
// # Safety
// `parsed` must be NULL or a pointer from [`fmd_parse_response`]; the
// returned pointer is valid until [`fmd_parsed_free`].
const char *fmd_parsed_explanation(const struct FmdParsed *parsed);

// Release a parsed-prediction handle. NULL is a no-op.
//
// # Safety
// `parsed` must be NULL or a pointer from [`fmd_parse_response`], not yet
// freed.
void fmd_parsed_free(struct FmdParsed *parsed);

// Render a prompt. `kind` is 0 for classification-only, 1 for joint;
// `label_code` is -1 when the record is unlabeled; `explanation` may be
// NULL. On success writes a handle to `out_prompt` (free with
// [`fmd_prompt_free`]).
//
// # Safety
// String arguments must be NULL or valid NUL-terminated strings;
// `out_prompt` must be writable.
enum FmdStatus fmd_render_prompt(const char *claim,
                                 const char *justification,
                                 const char *explanation,
                                 int32_t label_code,
                                 int32_t kind,
                                 bool include_target,
                                 struct FmdPrompt **out_prompt);

// Rendered input text, borrowed from the handle.
//
// # Safety
// `prompt` must be NULL or a pointer from [`fmd_render_prompt`]; the
// returned pointer is valid until [`fmd_prompt_free`].
const char *fmd_prompt_input(const struct FmdPrompt *prompt);

// Rendered training target (empty for inference prompts), borrowed from
// the handle.
//
// # Safety
// `prompt` must be NULL or a pointer from [`fmd_render_prompt`]; the
// returned pointer is valid until [`fmd_prompt_free`].
const char *fmd_prompt_target(const struct FmdPrompt *prompt);

// Release a prompt handle. NULL is a no-op.
//
// # Safety
// `prompt` must be NULL or a pointer from [`fmd_render_prompt`], not yet
// freed.
void fmd_prompt_free(struct FmdPrompt *prompt);

// ROUGE-N between two texts; `n` must be at least 1.
//
// # Safety
// String arguments must be valid NUL-terminated strings; `out` must be
// writable.
enum FmdStatus fmd_rouge_n(const char *candidate,
                           const char *reference,
                           uint32_t n,
                           struct FmdRouge *out);

// ROUGE-L between two texts.
//
// # Safety
// String arguments must be valid NUL-terminated strings; `out` must be
// writable.
enum FmdStatus fmd_rouge_l(const char *candidate, const char *reference, struct FmdRouge *out);

// Micro-averaged F1 over parallel arrays of label codes.
//
// # Safety
// `predictions` and `golds` must point to `len` readable i32 values; `out`
// must be writable.
enum FmdStatus fmd_micro_f1(const int32_t *predictions,
                            const int32_t *golds,
                            size_t len,
                            double *out);

// Composite overall score: arithmetic mean of micro F1 and ROUGE-1 F.
// Inputs must lie in [0, 1].
//
// # Safety
// `out` must be writable.
enum FmdStatus fmd_overall_score(double micro_f1_value, double rouge1_f1, double *out);

// New empty evaluation session. Free with [`fmd_eval_free`].
struct FmdEvaluator *fmd_eval_new(void);

// Append one scored row: gold and predicted label codes, the candidate
// explanation, the gold reference explanation, and the parse status code
// (0 clean, 1 fallback, 2 failed). NULL explanations count as empty.
//
// # Safety
// `eval` must come from [`fmd_eval_new`]; string arguments must be NULL or
// valid NUL-terminated strings.
enum FmdStatus fmd_eval_add(struct FmdEvaluator *eval,
                            int32_t gold_label,
                            int32_t predicted_label,
                            const char *candidate,
                            const char *reference,
                            int32_t parse_status);

// Compute the full evaluation report over the accumulated rows and write
// it as a json document to `out_json` (free with [`fmd_string_free`]).
// The session stays valid and can keep accumulating.
//
// # Safety
// `eval` must come from [`fmd_eval_new`]; `out_json` must be writable.
enum FmdStatus fmd_eval_finish_json(const struct FmdEvaluator *eval, char **out_json);

// Release an evaluation session. NULL is a no-op.
//
// # Safety
// `eval` must be NULL or a pointer from [`fmd_eval_new`], not yet freed.
void fmd_eval_free(struct FmdEvaluator *eval);

// Release a string returned through an out-pointer. NULL is a no-op.
//
// # Safety
// `s` must be NULL or a string allocated by this library, not yet freed.
void fmd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FMD_FFI_H */
