#ifndef COURSECORRECT_H
#define COURSECORRECT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_ARGUMENT = 1,
  CC_STATUS_INVALID_UTF8 = 2,
  CC_STATUS_INVALID_ARGUMENT = 3,
  CC_STATUS_PARSE_ERROR = 4,
  CC_STATUS_IO_ERROR = 5,
  CC_STATUS_PANIC = 6,
} CcStatus;

/**
 * A parsed PRM report together with the variant it was parsed for.
 */
typedef struct CcGuidance CcGuidance;

/**
 * A loaded trajectory.
 */
typedef struct CcTranscript CcTranscript;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Owned by the
 * library and valid until the next failing call on this thread.
 */
const char *cc_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void cc_string_free(char *s);

/**
 * Loads a trajectory file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a writable pointer.
 */
enum CcStatus cc_transcript_load(const char *path, struct CcTranscript **out);

/**
 * Parses a trajectory from JSON Lines text.
 *
 * # Safety
 * `jsonl` must be a NUL-terminated string; `out` a writable pointer.
 */
enum CcStatus cc_transcript_parse(const char *jsonl, struct CcTranscript **out);

/**
 * # Safety
 * `t` must be NULL or a handle from this library, not yet freed.
 */
void cc_transcript_free(struct CcTranscript *t);

/**
 * Number of steps, or 0 for NULL.
 *
 * # Safety
 * `t` must be NULL or a live handle.
 */
size_t cc_transcript_step_count(const struct CcTranscript *t);

/**
 * Outcome name (`submitted`, `auto_submitted`, ...).
 *
 * # Safety
 * `t` must be a live handle; `out` a writable pointer.
 */
enum CcStatus cc_transcript_outcome(const struct CcTranscript *t, char **out);

/**
 * Serialized PRM context for the last `k` steps.
 *
 * # Safety
 * `t` must be a live handle; `description` a NUL-terminated string; `out`
 * a writable pointer.
 */
enum CcStatus cc_transcript_window_context(const struct CcTranscript *t,
                                           const char *description,
                                           size_t k,
                                           char **out);

/**
 * Detector findings for the last `k` steps, as a JSON array.
 *
 * # Safety
 * `t` must be a live handle; `out` a writable pointer.
 */
enum CcStatus cc_detect_window(const struct CcTranscript *t, size_t k, char **out);

/**
 * Dollars per 100 instances for per-instance average token counts.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum CcStatus cc_cost_per_100(uint64_t prompt_tokens,
                              uint64_t completion_tokens,
                              double input_per_mtok,
                              double output_per_mtok,
                              double *out);

/**
 * Whether the supervisor runs after step `t` with interval `n`.
 */
bool cc_should_invoke(size_t t, size_t n);

/**
 * PRM prompt for a variant name (`S`, `C`, ..., `DR`) and a serialized
 * context, using the bundled taxonomy.
 *
 * # Safety
 * `variant` and `context` must be NUL-terminated strings; `out` a writable
 * pointer.
 */
enum CcStatus cc_build_prompt(const char *variant, const char *context, char **out);

/**
 * Parses raw PRM output for a variant.
 *
 * # Safety
 * `raw` and `variant` must be NUL-terminated strings; `out` a writable
 * pointer.
 */
enum CcStatus cc_guidance_parse(const char *raw, const char *variant, struct CcGuidance **out);

/**
 * The injection text the policy would receive.
 *
 * # Safety
 * `g` must be a live handle; `out` a writable pointer.
 */
enum CcStatus cc_guidance_project(const struct CcGuidance *g, char **out);

/**
 * The parsed report as JSON.
 *
 * # Safety
 * `g` must be a live handle; `out` a writable pointer.
 */
enum CcStatus cc_guidance_to_json(const struct CcGuidance *g, char **out);

/**
 * # Safety
 * `g` must be NULL or a handle from this library, not yet freed.
 */
void cc_guidance_free(struct CcGuidance *g);

/**
 * Aggregates results (one JSON object per line) into run metrics JSON.
 * `price_table_json` may be NULL for the bundled prices.
 *
 * # Safety
 * `results_jsonl` must be a NUL-terminated string, `price_table_json` NULL
 * or one; `out` a writable pointer.
 */
enum CcStatus cc_metrics_aggregate_json(const char *results_jsonl,
                                        const char *price_table_json,
                                        char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COURSECORRECT_H */
