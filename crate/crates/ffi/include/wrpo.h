#ifndef WRPO_H
#define WRPO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define WRPO_ROLE_COUNT 6

/**
 * Result code of every fallible call.
 */
typedef enum WrpoStatus {
  WRPO_STATUS_OK = 0,
  WRPO_STATUS_NULL_POINTER = 1,
  WRPO_STATUS_INVALID_INPUT = 2,
  WRPO_STATUS_USAGE = 3,
  WRPO_STATUS_CONFIG = 4,
  WRPO_STATUS_DATA = 5,
  WRPO_STATUS_NUMERIC = 6,
  WRPO_STATUS_IO = 7,
  WRPO_STATUS_BUFFER_TOO_SMALL = 8,
  WRPO_STATUS_PANIC = 9,
} WrpoStatus;

/**
 * Response roles; also the index into [`WrpoLossOutput::grad_wrt_logps`].
 */
typedef enum WrpoRole {
  WRPO_ROLE_CHOSEN = 0,
  WRPO_ROLE_REJECTED = 1,
  WRPO_ROLE_SOURCE_CHOSEN = 2,
  WRPO_ROLE_TARGET_CHOSEN = 3,
  WRPO_ROLE_SOURCE_REJECTED = 4,
  WRPO_ROLE_TARGET_REJECTED = 5,
} WrpoRole;

typedef enum WrpoObjectiveKind {
  WRPO_OBJECTIVE_KIND_DPO = 0,
  WRPO_OBJECTIVE_KIND_IPO = 1,
  WRPO_OBJECTIVE_KIND_SIMPO = 2,
  WRPO_OBJECTIVE_KIND_WRPO_DPO = 3,
  WRPO_OBJECTIVE_KIND_WRPO_SIMPO = 4,
  WRPO_OBJECTIVE_KIND_WRPO_IPO = 5,
  WRPO_OBJECTIVE_KIND_WRPO_WITH_YLS = 6,
} WrpoObjectiveKind;

typedef enum WrpoScheduleKind {
  WRPO_SCHEDULE_KIND_LINEAR = 0,
  WRPO_SCHEDULE_KIND_STATIC = 1,
} WrpoScheduleKind;

/**
 * Opaque policy handle.
 */
typedef struct WrpoPolicy WrpoPolicy;

typedef struct WrpoSamplingConfig {
  double temperature;
  double top_p;
  size_t max_length;
  uint64_t seed;
} WrpoSamplingConfig;

typedef struct WrpoRoleInput {
  enum WrpoRole role;
  double theta_logp;
  double ref_logp;
  size_t length;
} WrpoRoleInput;

typedef struct WrpoObjectiveConfig {
  enum WrpoObjectiveKind kind;
  double beta;
  double tau;
  double gamma;
  double alpha;
} WrpoObjectiveConfig;

/**
 * Margins that do not apply to the objective are NaN; gradient entries for
 * absent roles are 0.
 */
typedef struct WrpoLossOutput {
  double loss;
  double margin;
  double on_policy_margin;
  double hybrid_policy_margin;
  double grad_wrt_logps[WRPO_ROLE_COUNT];
} WrpoLossOutput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *wrpo_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *wrpo_version(void);

/**
 * Loads a checkpoint written by `wrpo`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum WrpoStatus wrpo_policy_load(const char *path, struct WrpoPolicy **out);

/**
 * A uniform policy over `content_tokens` content symbols plus bos/eos.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum WrpoStatus wrpo_policy_uniform(size_t content_tokens, size_t order, struct WrpoPolicy **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `policy` must come from this library and not be used afterwards.
 */
void wrpo_policy_free(struct WrpoPolicy *policy);

/**
 * # Safety
 * `policy` must be a valid handle and `path` a nul-terminated string.
 */
enum WrpoStatus wrpo_policy_save(const struct WrpoPolicy *policy, const char *path);

/**
 * Vocabulary size including bos and eos; 0 for a null handle.
 *
 * # Safety
 * `policy` must be null or a valid handle.
 */
size_t wrpo_policy_vocab_size(const struct WrpoPolicy *policy);

/**
 * # Safety
 * `policy` must be null or a valid handle.
 */
size_t wrpo_policy_eos(const struct WrpoPolicy *policy);

/**
 * `log π(response | prompt)`; the response must end with eos.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum WrpoStatus wrpo_policy_sequence_log_prob(const struct WrpoPolicy *policy,
                                              const size_t *prompt,
                                              size_t prompt_len,
                                              const size_t *response,
                                              size_t response_len,
                                              double *out);

/**
 * Per-token average of [`wrpo_policy_sequence_log_prob`].
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum WrpoStatus wrpo_policy_avg_log_prob(const struct WrpoPolicy *policy,
                                         const size_t *prompt,
                                         size_t prompt_len,
                                         const size_t *response,
                                         size_t response_len,
                                         double *out);

/**
 * Fills `cfg` with the library defaults.
 *
 * # Safety
 * `cfg` must be a valid pointer.
 */
enum WrpoStatus wrpo_sampling_default(struct WrpoSamplingConfig *cfg);

/**
 * Samples one response (always eos-terminated) into `out_tokens`.
 * `*out_len` receives the response length; if it exceeds `capacity` the
 * call returns `BufferTooSmall` and nothing is written to `out_tokens`.
 *
 * # Safety
 * Pointers must be valid; `out_tokens` must hold `capacity` elements.
 */
enum WrpoStatus wrpo_policy_sample(const struct WrpoPolicy *policy,
                                   const size_t *prompt,
                                   size_t prompt_len,
                                   const struct WrpoSamplingConfig *cfg,
                                   size_t *out_tokens,
                                   size_t capacity,
                                   size_t *out_len);

/**
 * Writes the 64-character hex parameter digest plus a nul into `buf`.
 *
 * # Safety
 * `buf` must hold `capacity` bytes.
 */
enum WrpoStatus wrpo_policy_digest(const struct WrpoPolicy *policy, char *buf, size_t capacity);

/**
 * Evaluates one objective on per-role sequence log-probabilities.
 *
 * # Safety
 * `roles` must hold `count` entries; `cfg` and `out` must be valid.
 */
enum WrpoStatus wrpo_objective_evaluate(const struct WrpoRoleInput *roles,
                                        size_t count,
                                        const struct WrpoObjectiveConfig *cfg,
                                        struct WrpoLossOutput *out);

/**
 * Fusion coefficient at `step` for a schedule ramping over `total_steps`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum WrpoStatus wrpo_schedule_alpha_at(enum WrpoScheduleKind kind,
                                       double target,
                                       size_t total_steps,
                                       size_t step,
                                       double *out);

/**
 * Equivalent of `wrpo gen-data`. A null `config_path` uses defaults; a
 * non-null `out_dir` overrides the configured output directory.
 *
 * # Safety
 * Non-null arguments must be nul-terminated strings.
 */
enum WrpoStatus wrpo_gen_data(const char *config_path, const char *out_dir);

/**
 * Equivalent of `wrpo train --stage <stage>` with `stage` one of
 * `"sft"`, `"po"`, `"full"`.
 *
 * # Safety
 * `stage` and non-null path arguments must be nul-terminated strings.
 */
enum WrpoStatus wrpo_train(const char *config_path, const char *out_dir, const char *stage);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WRPO_H */
