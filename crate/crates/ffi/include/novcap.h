#ifndef NOVCAP_H
#define NOVCAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. The first four match the command-line exit codes.
 */
typedef enum NovcapStatus {
  NOVCAP_STATUS_OK = 0,
  /**
   * Bad argument or configuration value.
   */
  NOVCAP_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Malformed or inconsistent input data (including checkpoints and I/O).
   */
  NOVCAP_STATUS_DATA = 2,
  /**
   * Non-finite values or a failed numeric check.
   */
  NOVCAP_STATUS_NUMERIC = 3,
  NOVCAP_STATUS_NULL_POINTER = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  NOVCAP_STATUS_INTERNAL = 5,
} NovcapStatus;

/**
 * Opaque model handle.
 */
typedef struct NovcapModel NovcapModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread ("" if none). The pointer
 * stays valid until the next library call on this thread.
 */
const char *novcap_last_error(void);

/**
 * Loads a checkpoint file into a new handle written to `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NovcapStatus novcap_model_load(const char *path, struct NovcapModel **out);

/**
 * Writes the model as a checkpoint file.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum NovcapStatus novcap_model_save(const struct NovcapModel *model, const char *path);

/**
 * Adds the categories of a feature file; the expanded model is a new
 * handle in `*out` and `model` is left unchanged.
 *
 * # Safety
 * `model` must be a live handle, `feature_path` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum NovcapStatus novcap_model_expand(const struct NovcapModel *model,
                                      const char *feature_path,
                                      struct NovcapModel **out);

/**
 * Vocabulary size, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t novcap_model_vocab_size(const struct NovcapModel *model);

/**
 * Image-feature dimension expected by `novcap_caption`, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t novcap_model_feature_dim(const struct NovcapModel *model);

/**
 * Captions one image. `tags`/`tag_plural` are `num_tags` category names and
 * plural flags (both may be null when `num_tags` is 0). With
 * `use_constraints` nonzero, tags of categories added by expansion are
 * forced into the caption. The caption is written to `*out_caption` (free
 * it with `novcap_string_free`) and its log-probability to `*out_logprob`.
 *
 * # Safety
 * `feature` must point to `dim` doubles, `tags` and `tag_plural` to
 * `num_tags` entries each, and the out pointers must be valid.
 */
enum NovcapStatus novcap_caption(const struct NovcapModel *model,
                                 const double *feature,
                                 size_t dim,
                                 const char *const *tags,
                                 const bool *tag_plural,
                                 size_t num_tags,
                                 size_t beam_size,
                                 bool use_constraints,
                                 char **out_caption,
                                 double *out_logprob);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void novcap_model_free(struct NovcapModel *model);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void novcap_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NOVCAP_H */
