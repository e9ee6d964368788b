#ifndef TEACHROUTE_H
#define TEACHROUTE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TR_OK 0

/**
 * A required pointer argument was null.
 */
#define TR_ERR_NULL_ARGUMENT -1

/**
 * A string argument was not valid UTF-8.
 */
#define TR_ERR_INVALID_UTF8 -2

/**
 * An output buffer had the wrong length.
 */
#define TR_ERR_BUFFER_LENGTH -3

/**
 * An unknown enum value was passed.
 */
#define TR_ERR_INVALID_ARGUMENT -4

/**
 * A Rust panic was caught at the boundary.
 */
#define TR_ERR_PANIC -5

#define TR_NORMALIZATION_ZSCORE 0

#define TR_NORMALIZATION_MINMAX 1

/**
 * Opaque teacher pool.
 */
typedef struct TrPool TrPool;

/**
 * Opaque router checkpoint.
 */
typedef struct TrRouter TrRouter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the same
 * thread.
 */
const char *tr_last_error_message(void);

/**
 * Loads a teacher pool from a JSON file. On success `*out` receives a handle
 * that must be released with [`tr_pool_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t tr_pool_load(const char *path, struct TrPool **out);

/**
 * # Safety
 * `pool` must come from [`tr_pool_load`] and not have been freed. Null is a no-op.
 */
void tr_pool_free(struct TrPool *pool);

/**
 * Number of teachers, or 0 for a null handle.
 *
 * # Safety
 * `pool` must be null or a live handle.
 */
size_t tr_pool_len(const struct TrPool *pool);

/**
 * Hex fingerprint of the pool's ordered teacher ids. Owned by the handle.
 *
 * # Safety
 * `pool` must be null or a live handle.
 */
const char *tr_pool_fingerprint(const struct TrPool *pool);

/**
 * Teacher id at `index`, or null when out of range. Owned by the handle.
 *
 * # Safety
 * `pool` must be null or a live handle.
 */
const char *tr_pool_teacher_id(const struct TrPool *pool, size_t index);

/**
 * Loads a router checkpoint. On success `*out` receives a handle that must be
 * released with [`tr_router_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t tr_router_load(const char *path, struct TrRouter **out);

/**
 * # Safety
 * `router` must come from [`tr_router_load`] and not have been freed. Null is a no-op.
 */
void tr_router_free(struct TrRouter *router);

/**
 * Number of teachers the router scores, or 0 for a null handle.
 *
 * # Safety
 * `router` must be null or a live handle.
 */
size_t tr_router_pool_size(const struct TrRouter *router);

/**
 * Fails with the fingerprint-mismatch code unless the router was trained on
 * exactly this pool.
 *
 * # Safety
 * Both handles must be live.
 */
int32_t tr_router_check_pool(const struct TrRouter *router, const struct TrPool *pool);

/**
 * Writes one score per teacher into `out_scores`, which must hold exactly
 * `tr_router_pool_size(router)` doubles.
 *
 * # Safety
 * `text` must be NUL-terminated and `out_scores` valid for `out_len` writes.
 */
int32_t tr_router_score(const struct TrRouter *router,
                        const char *text,
                        double *out_scores,
                        size_t out_len);

/**
 * Index of the highest-scoring teacher for `text`, lower index on ties.
 *
 * # Safety
 * `text` must be NUL-terminated and `out_index` a valid pointer.
 */
int32_t tr_router_route(const struct TrRouter *router, const char *text, size_t *out_index);

/**
 * Mean log-probability of tokens `[prompt_boundary, len)`.
 *
 * # Safety
 * `logprobs` must be valid for `len` reads and `out` a valid pointer.
 */
int32_t tr_learnability_reward(const double *logprobs,
                               size_t len,
                               size_t prompt_boundary,
                               double *out);

/**
 * `(1 − alpha)·quality + alpha·learnability`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t tr_combined_reward(double quality, double learnability, double alpha, double *out);

/**
 * Normalizes `len` values across teachers into `out`, which may alias `values`.
 *
 * # Safety
 * `values` must be valid for `len` reads and `out` for `len` writes.
 */
int32_t tr_normalize(const double *values, size_t len, uint32_t method, double *out);

/**
 * `σ(scores[b] − scores[a])`: probability that teacher `b` beats teacher `a`.
 *
 * # Safety
 * `scores` must be valid for `len` reads and `out` a valid pointer.
 */
int32_t tr_pair_prob(const double *scores, size_t len, size_t a, size_t b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEACHROUTE_H */
