#ifndef GROUPREC_H
#define GROUPREC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define GREC_MODEL_GMF 0

#define GREC_MODEL_MLP 1

#define GREC_STRATEGY_IPA 0

#define GREC_STRATEGY_AVERAGE 1

#define GREC_STRATEGY_EXPERTISE 2

#define GREC_STRATEGY_SOFTMAX 3

#define GREC_WEIGHTING_AVERAGE 0

#define GREC_WEIGHTING_EXPERTISE 1

#define GREC_WEIGHTING_SOFTMAX 2

// Result code of every fallible call.
typedef enum GrecStatus {
  GREC_STATUS_OK = 0,
  GREC_STATUS_NULL_ARGUMENT = 1,
  GREC_STATUS_INVALID_ARGUMENT = 2,
  GREC_STATUS_IO = 3,
  GREC_STATUS_PARSE = 4,
  GREC_STATUS_EMPTY_DATASET = 5,
  GREC_STATUS_SHAPE = 6,
  GREC_STATUS_INDEX_OUT_OF_RANGE = 7,
  GREC_STATUS_NON_FINITE = 8,
  GREC_STATUS_EMPTY_GROUP = 9,
  GREC_STATUS_INVALID_WEIGHTS = 10,
  GREC_STATUS_CHECKPOINT = 11,
  GREC_STATUS_GROUPS_FILE = 12,
  GREC_STATUS_FINGERPRINT_MISMATCH = 13,
  GREC_STATUS_PROTOCOL = 14,
  GREC_STATUS_PANIC = 15,
} GrecStatus;

// Ratings with a train/test split.
typedef struct GrecDataset GrecDataset;

// A set of synthesized groups tied to one dataset split.
typedef struct GrecGroups GrecGroups;

// A trained or loaded GMF/MLP model.
typedef struct GrecModel GrecModel;

// Per-size metric summaries from one evaluation.
typedef struct GrecReport GrecReport;

// Training hyperparameters. `mlp_layers` may be null when `mlp_layers_len` is 0.
typedef struct GrecTrainConfig {
  size_t factors;
  const size_t *mlp_layers;
  size_t mlp_layers_len;
  double learning_rate;
  size_t batch_size;
  size_t epochs;
  uint64_t seed;
} GrecTrainConfig;

typedef struct GrecReportRow {
  uint32_t model;
  uint32_t strategy;
  size_t size;
  size_t n_groups;
  double mae_mean;
  double mae_std;
  double mse_mean;
  double mse_std;
  double max_mean;
  double max_std;
  double ndcg_mean;
  double ndcg_std;
} GrecReportRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call into this library on the same thread.
const char *grec_last_error(void);

// Loads a delimited `user item rating` file. `delimiter` is a Unicode scalar;
// any whitespace character splits on runs of whitespace.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum GrecStatus grec_dataset_load(const char *path,
                                  uint32_t delimiter,
                                  bool has_header,
                                  struct GrecDataset **out_dataset);

// Returns a new dataset with a per-user test split. The input is unchanged.
//
// # Safety
// `dataset` must be a live handle and `out_dataset` a valid pointer.
enum GrecStatus grec_dataset_split(const struct GrecDataset *dataset,
                                   double test_fraction,
                                   uint64_t seed,
                                   struct GrecDataset **out_dataset);

// Any of the out-pointers may be null.
//
// # Safety
// `dataset` must be a live handle; non-null out-pointers must be valid.
enum GrecStatus grec_dataset_shape(const struct GrecDataset *dataset,
                                   size_t *out_users,
                                   size_t *out_items,
                                   size_t *out_ratings);

// Copies per-user train rating counts into `out_counts`, which must hold
// exactly as many entries as the dataset has users.
//
// # Safety
// `out_counts` must point to `len` writable values.
enum GrecStatus grec_dataset_train_counts(const struct GrecDataset *dataset,
                                          size_t *out_counts,
                                          size_t len);

// # Safety
// `dataset` must be null or a handle not yet freed.
void grec_dataset_free(struct GrecDataset *dataset);

struct GrecTrainConfig grec_train_config_default(void);

// Trains on the train partition of `dataset`.
//
// # Safety
// Handles must be live; `config` must be valid with `mlp_layers_len` readable entries.
enum GrecStatus grec_model_train(const struct GrecDataset *dataset,
                                 uint32_t model_type_code,
                                 const struct GrecTrainConfig *config,
                                 struct GrecModel **out_model);

// # Safety
// `path` must be a NUL-terminated string and `out_model` a valid pointer.
enum GrecStatus grec_model_load(const char *path, struct GrecModel **out_model);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum GrecStatus grec_model_save(const struct GrecModel *model, const char *path);

// # Safety
// `model` must be a live handle; non-null out-pointers must be valid.
enum GrecStatus grec_model_shape(const struct GrecModel *model,
                                 uint32_t *out_model_type,
                                 size_t *out_users,
                                 size_t *out_items,
                                 size_t *out_factors);

// Clamped individual prediction.
//
// # Safety
// `model` must be a live handle and `out_rating` a valid pointer.
enum GrecStatus grec_model_predict(const struct GrecModel *model,
                                   uint32_t user,
                                   uint32_t item,
                                   double *out_rating);

// # Safety
// `model` must be null or a handle not yet freed.
void grec_model_free(struct GrecModel *model);

// Aggregation weights for `members`, written in the same order as `members`.
// `counts` holds train rating counts indexed by user and may be empty for
// the average weighting.
//
// # Safety
// `members` and `out_weights` must hold `n_members` values; `counts` must hold `n_counts`.
enum GrecStatus grec_group_weights(uint32_t weighting_code,
                                   const uint32_t *members,
                                   size_t n_members,
                                   const size_t *counts,
                                   size_t n_counts,
                                   double *out_weights);

// Clamped group prediction of `item` for `members` under `strategy_code`.
//
// # Safety
// `members` must hold `n_members` values, `counts` `n_counts`; `out_rating` must be valid.
enum GrecStatus grec_group_predict(const struct GrecModel *model,
                                   uint32_t strategy_code,
                                   const uint32_t *members,
                                   size_t n_members,
                                   const size_t *counts,
                                   size_t n_counts,
                                   uint32_t item,
                                   double *out_rating);

// Synthesizes up to `per_size` groups for each size. Sizes that run out of
// attempts yield fewer groups; compare [`grec_groups_len`] with the request.
//
// # Safety
// `dataset` must be a live handle, `sizes` must hold `n_sizes` values.
enum GrecStatus grec_groups_generate(const struct GrecDataset *dataset,
                                     const size_t *sizes,
                                     size_t n_sizes,
                                     size_t per_size,
                                     uint64_t seed,
                                     size_t max_attempts,
                                     struct GrecGroups **out_groups);

// # Safety
// `path` must be a NUL-terminated string and `out_groups` a valid pointer.
enum GrecStatus grec_groups_load(const char *path, struct GrecGroups **out_groups);

// # Safety
// `groups` must be a live handle and `path` a NUL-terminated string.
enum GrecStatus grec_groups_save(const struct GrecGroups *groups, const char *path);

// Number of groups, or 0 for a null handle.
//
// # Safety
// `groups` must be null or a live handle.
size_t grec_groups_len(const struct GrecGroups *groups);

// # Safety
// `groups` must be null or a handle not yet freed.
void grec_groups_free(struct GrecGroups *groups);

// Scores every group under one strategy. `threads` of 0 uses the global pool.
//
// # Safety
// Handles must be live and `out_report` a valid pointer.
enum GrecStatus grec_evaluate(const struct GrecModel *model,
                              const struct GrecDataset *dataset,
                              const struct GrecGroups *groups,
                              uint32_t strategy_code,
                              size_t ndcg_n,
                              size_t threads,
                              struct GrecReport **out_report);

// Number of rows (one per group size), or 0 for a null handle.
//
// # Safety
// `report` must be null or a live handle.
size_t grec_report_len(const struct GrecReport *report);

// # Safety
// `report` must be a live handle and `out_row` a valid pointer.
enum GrecStatus grec_report_row(const struct GrecReport *report,
                                size_t index,
                                struct GrecReportRow *out_row);

// Writes the report as tab-separated values.
//
// # Safety
// `report` must be a live handle and `path` a NUL-terminated string.
enum GrecStatus grec_report_write_tsv(const struct GrecReport *report, const char *path);

// # Safety
// `report` must be null or a handle not yet freed.
void grec_report_free(struct GrecReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GROUPREC_H */
