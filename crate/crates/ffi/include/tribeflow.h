/* Generated by cbindgen. Do not edit. */

#ifndef TRIBEFLOW_H
#define TRIBEFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TfStatus {
  TF_STATUS_OK = 0,
  TF_STATUS_NULL_POINTER = 1,
  TF_STATUS_INVALID_ARGUMENT = 2,
  TF_STATUS_IO = 3,
  TF_STATUS_FORMAT = 4,
  TF_STATUS_UNKNOWN_ITEM = 5,
  TF_STATUS_BUFFER_TOO_SMALL = 6,
  TF_STATUS_NUMERIC = 7,
  TF_STATUS_PANIC = 8,
} TfStatus;

/**
 * A loaded model.
 */
typedef struct TfModel TfModel;

/**
 * A prediction request. Arrays may be null when their length is 0.
 */
typedef struct TfQuery {
  /**
   * User id, or -1 for a user the model has not seen.
   */
  int64_t user;
  /**
   * Recent item ids, oldest first; the last is the current item.
   */
  const uint32_t *history;
  size_t history_len;
  /**
   * Gaps in seconds between consecutive history items, optionally
   * followed by the time since the current item.
   */
  const double *taus;
  size_t taus_len;
  /**
   * Items to score; 0 length means every item.
   */
  const uint32_t *candidates;
  size_t candidates_len;
} TfQuery;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model file. On success `*out` owns a handle for [`tf_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TfStatus tf_model_load(const char *path, struct TfModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`tf_model_load`] and not have been freed.
 */
void tf_model_free(struct TfModel *model);

/**
 * Number of latent environments, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tf_model_num_envs(const struct TfModel *model);

/**
 * Number of items, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tf_model_num_items(const struct TfModel *model);

/**
 * Number of users, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tf_model_num_users(const struct TfModel *model);

/**
 * Looks up an item id by name.
 *
 * # Safety
 * `model` must be a live handle, `name` NUL-terminated, `out_id` valid.
 */
enum TfStatus tf_model_item_id(const struct TfModel *model, const char *name, uint32_t *out_id);

/**
 * Looks up a user id by name; unknown users give `TF_STATUS_INVALID_ARGUMENT`.
 *
 * # Safety
 * `model` must be a live handle, `name` NUL-terminated, `out_id` valid.
 */
enum TfStatus tf_model_user_id(const struct TfModel *model, const char *name, uint32_t *out_id);

/**
 * Copies an item's name, NUL-terminated, into `buf`. `out_len` receives the
 * name length in bytes excluding the terminator.
 *
 * # Safety
 * `model` must be a live handle, `buf` writable for `capacity` bytes,
 * `out_len` valid.
 */
enum TfStatus tf_model_item_name(const struct TfModel *model,
                                 uint32_t id,
                                 char *buf,
                                 size_t capacity,
                                 size_t *out_len);

/**
 * Ranks candidates by descending score and writes the best `capacity` of
 * them. `out_len` receives the number written.
 *
 * # Safety
 * `model` must be a live handle, `query` valid with arrays of the stated
 * lengths, both output arrays writable for `capacity` values.
 */
enum TfStatus tf_rank(const struct TfModel *model,
                      const struct TfQuery *query,
                      uint32_t *out_items,
                      double *out_scores,
                      size_t capacity,
                      size_t *out_len);

/**
 * Next-item probabilities, one per candidate in candidate order, or one per
 * item id when the query has no candidates.
 *
 * # Safety
 * `model` must be a live handle, `query` valid, `out` writable for
 * `capacity` values, `out_len` valid.
 */
enum TfStatus tf_next_item_likelihood(const struct TfModel *model,
                                      const struct TfQuery *query,
                                      double *out,
                                      size_t capacity,
                                      size_t *out_len);

/**
 * Non-personalized probability of moving from `src` to `dst`.
 *
 * # Safety
 * `model` must be a live handle and `out` valid.
 */
enum TfStatus tf_pairwise_likelihood(const struct TfModel *model,
                                     uint32_t src,
                                     uint32_t dst,
                                     double *out);

/**
 * Posterior over environments for a query.
 *
 * # Safety
 * `model` must be a live handle, `query` valid, `out` writable for
 * `capacity` values, `out_len` valid.
 */
enum TfStatus tf_env_posterior(const struct TfModel *model,
                               const struct TfQuery *query,
                               double *out,
                               size_t capacity,
                               size_t *out_len);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on this thread.
 */
const char *tf_last_error_message(void);

/**
 * Static description of a status code.
 */
const char *tf_status_string(enum TfStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIBEFLOW_H */
