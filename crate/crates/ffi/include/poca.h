#ifndef POCA_H
#define POCA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define POCA_PHI_PARABOLIC 0

#define POCA_PHI_TENT 1

#define POCA_PHI_SQRT_PARABOLIC 2

typedef enum PocaStatus {
  POCA_STATUS_OK = 0,
  POCA_STATUS_NULL_POINTER = 1,
  POCA_STATUS_INVALID_UTF8 = 2,
  POCA_STATUS_INVALID_ARGUMENT = 3,
  POCA_STATUS_INTERNAL = 4,
} PocaStatus;

/**
 * Monte Carlo configuration handle.
 */
typedef struct PocaSimConfig PocaSimConfig;

/**
 * Result of one Monte Carlo run.
 */
typedef struct PocaSimSummary PocaSimSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on this thread.
 */
const char *poca_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void poca_string_free(char *s);

/**
 * Shannon entropy in bits.
 *
 * # Safety
 * `probs` must point to `len` doubles; `out` must be writable.
 */
enum PocaStatus poca_entropy(const double *probs, size_t len, double *out);

/**
 * Mutual information in bits of a row-major `rows x cols` joint table.
 *
 * # Safety
 * `cells` must point to `rows * cols` doubles; `out` must be writable.
 */
enum PocaStatus poca_mutual_information(const double *cells, size_t rows, size_t cols, double *out);

/**
 * `KL(p || q)` in bits. When `q` misses mass that `p` has, `*out_infinite`
 * is set and `*out` is `+inf`.
 *
 * # Safety
 * `p` and `q` must point to `len` doubles; both out pointers must be writable.
 */
enum PocaStatus poca_kl_divergence(const double *p,
                                   const double *q,
                                   size_t len,
                                   double *out,
                                   bool *out_infinite);

/**
 * New configuration with uniform eta, Dirichlet alpha and seeded random
 * signs. `phi` is one of the `POCA_PHI_*` constants.
 *
 * # Safety
 * `out` must be writable.
 */
enum PocaStatus poca_sim_config_new(size_t n,
                                    size_t m,
                                    uint64_t trials,
                                    uint64_t seed,
                                    uint32_t phi,
                                    double scale,
                                    struct PocaSimConfig **out);

/**
 * Worker threads for [`poca_sim_run`]; 0 means all cores. Results do not
 * depend on this setting.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum PocaStatus poca_sim_config_set_threads(struct PocaSimConfig *cfg, size_t threads);

/**
 * # Safety
 * `cfg` must be null or a live handle; it is dangling afterwards.
 */
void poca_sim_config_free(struct PocaSimConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum PocaStatus poca_sim_run(const struct PocaSimConfig *cfg, struct PocaSimSummary **out);

/**
 * Per-unit gap violations and the sum of L1, L2 and L-infinity norm
 * violations.
 *
 * # Safety
 * `s` must be a live handle; both out pointers must be writable.
 */
enum PocaStatus poca_sim_summary_violations(const struct PocaSimSummary *s,
                                            uint64_t *out_per_unit,
                                            uint64_t *out_norm);

/**
 * Full summary as JSON; free with [`poca_string_free`].
 *
 * # Safety
 * `s` must be a live handle; `out` must be writable.
 */
enum PocaStatus poca_sim_summary_to_json(const struct PocaSimSummary *s, char **out);

/**
 * # Safety
 * `s` must be null or a live handle; it is dangling afterwards.
 */
void poca_sim_summary_free(struct PocaSimSummary *s);

/**
 * Exact-match METEOR against the best of `n_refs` references.
 *
 * # Safety
 * `candidate` and each of the `n_refs` entries of `refs` must be
 * NUL-terminated strings; `out` must be writable.
 */
enum PocaStatus poca_meteor_exact(const char *candidate,
                                  const char *const *refs,
                                  size_t n_refs,
                                  double *out);

/**
 * `2.5 * max(cos, 0)` between two `dim`-dimensional embeddings.
 *
 * # Safety
 * Both vectors must hold `dim` doubles; `out` must be writable.
 */
enum PocaStatus poca_clip_score(const double *image_vec,
                                const double *text_vec,
                                size_t dim,
                                double *out);

/**
 * # Safety
 * Both arrays must hold `len` doubles; `out` must be writable.
 */
enum PocaStatus poca_pearson(const double *xs, const double *ys, size_t len, double *out);

/**
 * VQA prompt as a JSON array of `{role, content}` messages; a trailing
 * assistant message is the answer prefix.
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out` must be writable.
 */
enum PocaStatus poca_render_vqa_prompt(const char *caption, const char *question, char **out);

/**
 * # Safety
 * `question` must be a NUL-terminated string; `out` must be writable.
 */
enum PocaStatus poca_render_no_caption_prompt(const char *question, char **out);

/**
 * Merge prompt for one global and four local captions. `preset` is
 * `corrected`, `paper-verbatim` or `naive`.
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out` must be writable.
 */
enum PocaStatus poca_render_merge_prompt(const char *preset,
                                         const char *global,
                                         const char *top_left,
                                         const char *top_right,
                                         const char *bottom_left,
                                         const char *bottom_right,
                                         char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POCA_H */
