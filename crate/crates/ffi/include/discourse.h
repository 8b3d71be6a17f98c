#ifndef DISCOURSE_H
#define DISCOURSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DISCOURSE_LABEL_COUNT 5

typedef enum DiscourseStatus {
  DISCOURSE_STATUS_OK = 0,
  DISCOURSE_STATUS_NULL_POINTER = 1,
  DISCOURSE_STATUS_INVALID_ARGUMENT = 2,
  DISCOURSE_STATUS_IO = 3,
  DISCOURSE_STATUS_PARSE = 4,
  DISCOURSE_STATUS_BACKEND_UNAVAILABLE = 5,
  DISCOURSE_STATUS_CHECKPOINT = 6,
  DISCOURSE_STATUS_INTERNAL = 7,
  DISCOURSE_STATUS_PANIC = 8,
} DiscourseStatus;

/*
 A loaded dataset file.
 */
typedef struct DiscourseDataset DiscourseDataset;

/*
 A model restored from a checkpoint, with the encoders it was trained with.
 */
typedef struct DiscourseModel DiscourseModel;

/*
 Message for the most recent failure on this thread, or NULL. The
 pointer stays valid until the next failing call on the same thread.
 */
const char *discourse_last_error(void);

/*
 Static name of a label code, or NULL for an invalid code.
 */
const char *discourse_label_name(uint8_t code);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void discourse_string_free(char *s);

/*
 Loads a line-delimited dataset file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DiscourseStatus discourse_dataset_load(const char *path,
                                            bool require_labels,
                                            struct DiscourseDataset **out);

/*
 Number of posts, or 0 for NULL.

 # Safety
 `dataset` must be NULL or a live handle.
 */
size_t discourse_dataset_len(const struct DiscourseDataset *dataset);

/*
 Corpus statistics as a JSON string; free it with `discourse_string_free`.

 # Safety
 `dataset` must be a live handle; `out` must be writable.
 */
enum DiscourseStatus discourse_dataset_stats_json(const struct DiscourseDataset *dataset,
                                                  char **out);

/*
 # Safety
 `dataset` must be NULL or a live handle; it is invalid afterwards.
 */
void discourse_dataset_free(struct DiscourseDataset *dataset);

/*
 Inverse-frequency weights `N / (5 * N_c)` from five label counts.

 # Safety
 `counts` must point to 5 readable values and `out` to 5 writable ones.
 */
enum DiscourseStatus discourse_class_weights(const size_t *counts, double *out);

/*
 Per-class F1 (0-100) into `per_class[5]` and weighted F1 into `weighted`.

 # Safety
 `predictions` and `truths` must hold `n` label codes; `per_class` must
 have room for 5 values; `weighted` must be writable.
 */
enum DiscourseStatus discourse_f1_report(const uint8_t *predictions,
                                         const uint8_t *truths,
                                         size_t n,
                                         double *per_class,
                                         double *weighted);

/*
 Approximate-randomisation p-value for the weighted-F1 difference of two
 prediction lists.

 # Safety
 The three label arrays must each hold `n` codes; `p_value` must be writable.
 */
enum DiscourseStatus discourse_significance(const uint8_t *predictions_a,
                                            const uint8_t *predictions_b,
                                            const uint8_t *truths,
                                            size_t n,
                                            size_t trials,
                                            uint64_t seed,
                                            double *p_value);

/*
 Restores a model from a checkpoint directory or file. `caption_source`
 may be NULL for the default `precomputed:captions.jsonl`.

 # Safety
 String arguments must be NUL-terminated (or NULL where allowed); `out`
 must be writable.
 */
enum DiscourseStatus discourse_model_load(const char *checkpoint,
                                          const char *caption_source,
                                          struct DiscourseModel **out);

/*
 Classifies one post of `dataset`. Writes the five label probabilities
 to `probs` and the arg-max code to `label`.

 # Safety
 Handles must be live; `post_id` NUL-terminated; `probs` must have room
 for 5 values; `label` must be writable.
 */
enum DiscourseStatus discourse_model_predict(const struct DiscourseModel *model,
                                             const struct DiscourseDataset *dataset,
                                             const char *post_id,
                                             double *probs,
                                             uint8_t *label);

/*
 # Safety
 `model` must be NULL or a live handle; it is invalid afterwards.
 */
void discourse_model_free(struct DiscourseModel *model);

#endif  /* DISCOURSE_H */
