#ifndef COBA_H
#define COBA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CobaStrategy {
  COBA_STRATEGY_GREEDY = 0,
  COBA_STRATEGY_NUCLEUS = 1,
} CobaStrategy;

typedef enum CobaStatus {
  COBA_STATUS_OK = 0,
  COBA_STATUS_NULL_POINTER = 1,
  COBA_STATUS_INVALID_ARGUMENT = 2,
  COBA_STATUS_DOMAIN = 3,
  COBA_STATUS_PARSE = 4,
  COBA_STATUS_IO = 5,
  COBA_STATUS_LM_TRANSPORT = 6,
  COBA_STATUS_LM_PROTOCOL = 7,
  COBA_STATUS_LM_TIMEOUT = 8,
  COBA_STATUS_PANIC = 9,
} CobaStatus;

typedef enum CobaTermination {
  COBA_TERMINATION_EOS = 0,
  COBA_TERMINATION_MAX_LEN = 1,
  COBA_TERMINATION_FALLBACK = 2,
} CobaTermination;

typedef enum CobaEventKind {
  COBA_EVENT_KIND_FORWARD = 0,
  COBA_EVENT_KIND_BACKTRACK = 1,
  COBA_EVENT_KIND_FORCED_ROOT_ACCEPT = 2,
  COBA_EVENT_KIND_FALLBACK_TRIGGERED = 3,
  COBA_EVENT_KIND_EOS = 4,
  COBA_EVENT_KIND_MAX_LEN_STOP = 5,
} CobaEventKind;

/**
 * The outcome of one decode.
 */
typedef struct CobaDecodeResult CobaDecodeResult;

/**
 * A language model.
 */
typedef struct CobaLm CobaLm;

/**
 * Decoder settings. Start from [`coba_decode_options_default`].
 */
typedef struct CobaDecodeOptions {
  enum CobaStrategy strategy;
  double top_p;
  size_t min_len;
  size_t max_len;
  size_t budget_multiplier;
  uint64_t seed;
  /**
   * Backtrack with the detectors below; otherwise plain greedy or nucleus.
   */
  bool backtrack;
  double delta;
  bool use_phi;
  double phi;
  bool use_cad;
  double alpha;
} CobaDecodeOptions;

/**
 * A token id.
 */
typedef uint32_t CobaTokenId;

typedef struct CobaRougeL {
  double precision;
  double recall;
  double f1;
} CobaRougeL;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. Valid until the next
 * call into this library from the same thread.
 */
const char *coba_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *coba_version(void);

struct CobaDecodeOptions coba_decode_options_default(void);

/**
 * Opens a model from a spec string: `table:PATH`, `ngram:k=v,...`,
 * `ngram:PATH.json` or `remote:URL`.
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CobaStatus coba_lm_open(const char *spec, struct CobaLm **out);

/**
 * # Safety
 * `lm` must be null or a handle from [`coba_lm_open`] not yet freed.
 */
void coba_lm_free(struct CobaLm *lm);

/**
 * Vocabulary size, or 0 for a null handle.
 *
 * # Safety
 * `lm` must be null or a live handle.
 */
size_t coba_lm_vocab_size(const struct CobaLm *lm);

/**
 * # Safety
 * `lm` must be null or a live handle.
 */
CobaTokenId coba_lm_sos_id(const struct CobaLm *lm);

/**
 * # Safety
 * `lm` must be null or a live handle.
 */
CobaTokenId coba_lm_eos_id(const struct CobaLm *lm);

/**
 * Decodes a summary of `context`. `options` may be null for the defaults.
 *
 * # Safety
 * `lm` must be a live handle, `context` must point to `context_len` ids
 * (or be null when `context_len` is 0), and `out` must be valid.
 */
enum CobaStatus coba_decode(const struct CobaLm *lm,
                            const CobaTokenId *context,
                            size_t context_len,
                            const struct CobaDecodeOptions *options,
                            struct CobaDecodeResult **out);

/**
 * # Safety
 * `result` must be null or a handle from [`coba_decode`] not yet freed.
 */
void coba_result_free(struct CobaDecodeResult *result);

/**
 * Number of generated tokens (EOS excluded).
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t coba_result_len(const struct CobaDecodeResult *result);

/**
 * Generated tokens; valid while `result` is alive. Null for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
const CobaTokenId *coba_result_tokens(const struct CobaDecodeResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
size_t coba_result_steps_used(const struct CobaDecodeResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
bool coba_result_fallback(const struct CobaDecodeResult *result);

/**
 * # Safety
 * `result` must be a live handle.
 */
enum CobaTermination coba_result_termination(const struct CobaDecodeResult *result);

/**
 * Number of trace events of one kind.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t coba_result_event_count(const struct CobaDecodeResult *result, enum CobaEventKind kind);

/**
 * The trace as a JSON array; free with [`coba_string_free`].
 *
 * # Safety
 * `result` must be a live handle and `out` valid.
 */
enum CobaStatus coba_result_trace_json(const struct CobaDecodeResult *result, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void coba_string_free(char *s);

/**
 * ROUGE-L of `candidate` against `reference`; both must be non-empty.
 *
 * # Safety
 * Each pointer must reference the stated number of ids; `out` must be valid.
 */
enum CobaStatus coba_rouge_l(const CobaTokenId *candidate,
                             size_t candidate_len,
                             const CobaTokenId *reference,
                             size_t reference_len,
                             struct CobaRougeL *out);

/**
 * Cosine distance `1 - cos(u, v)` of two `dim`-dimensional vectors.
 *
 * # Safety
 * `u` and `v` must point to `dim` values; `out` must be valid.
 */
enum CobaStatus coba_cosine_distance(const double *u, const double *v, size_t dim, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COBA_H */
