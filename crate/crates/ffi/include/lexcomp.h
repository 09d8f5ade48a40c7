/* C interface to the lexcomp lexical-complexity toolkit. */

#ifndef LEXCOMP_H
#define LEXCOMP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define LEXCOMP_OK 0

/**
 * Null pointer, invalid UTF-8, or an argument outside its domain.
 */
#define LEXCOMP_ERR_USAGE 1

/**
 * Missing or malformed file, or an invalid configuration.
 */
#define LEXCOMP_ERR_DATA 2

/**
 * Non-finite numbers inside a numeric routine (e.g. a diverged loss).
 */
#define LEXCOMP_ERR_NUMERIC 3

/**
 * A caught panic; state is unchanged but this is always a bug.
 */
#define LEXCOMP_ERR_INTERNAL 4

/**
 * Opaque checkpoint handle.
 */
typedef struct LexcompModel LexcompModel;

/**
 * The five evaluation metrics over one prediction/gold pairing.
 */
typedef struct LexcompMetrics {
  double pearson;
  double spearman;
  double mae;
  double mse;
  double r2;
  /**
   * Number of scored instances.
   */
  uint64_t count;
} LexcompMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Toolkit version as a static NUL-terminated string; do not free.
 */
const char *lexcomp_version(void);

/**
 * Message for the most recent failure on this thread, or null if the
 * last call succeeded. The caller owns the returned string.
 */
char *lexcomp_last_error_message(void);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `ptr` must have been returned by a `lexcomp_*` function and not
 * already freed.
 */
void lexcomp_string_free(char *ptr);

/**
 * Computes all five metrics over parallel arrays of length `len`.
 *
 * # Safety
 * `preds` and `gold` must point to `len` readable doubles; `out` must
 * be a valid destination.
 */
int32_t lexcomp_metrics(const double *preds,
                        const double *gold,
                        uintptr_t len,
                        struct LexcompMetrics *out);

/**
 * Loads a checkpoint file into a fresh handle.
 *
 * # Safety
 * `path` is a NUL-terminated UTF-8 path; `out` must be a valid
 * destination for the handle pointer.
 */
int32_t lexcomp_model_load(const char *path, struct LexcompModel **out);

/**
 * Releases a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must come from `lexcomp_model_load` and not already be freed.
 */
void lexcomp_model_free(struct LexcompModel *model);

/**
 * Subtask the model was trained for ("single_word" or "mwe"); the
 * caller owns the returned string. Null model gives null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
char *lexcomp_model_subtask(const struct LexcompModel *model);

/**
 * Scores one target inside one sentence. `domain` is "europarl",
 * "biomed" or "bible". The score lands in [0,1].
 *
 * # Safety
 * `model` must be a live handle; strings are NUL-terminated UTF-8;
 * `out_score` must be a valid destination.
 */
int32_t lexcomp_model_predict_one(const struct LexcompModel *model,
                                  const char *sentence,
                                  const char *target,
                                  const char *domain,
                                  double *out_score);

/**
 * Predicts a whole TSV dataset and writes an `id,prediction` CSV.
 * `out_rows` (nullable) receives the number of rows written.
 *
 * # Safety
 * `model` must be a live handle; paths are NUL-terminated UTF-8;
 * `out_rows` is either null or a valid destination.
 */
int32_t lexcomp_model_predict_file(const struct LexcompModel *model,
                                   const char *data_tsv,
                                   const char *out_csv,
                                   uint64_t *out_rows);

/**
 * Runs a full training pipeline from a run-config JSON file into
 * `out_dir` (checkpoints, manifest, epoch log). `out_best_pearson`
 * (nullable) receives the best whole-dev Pearson, or NaN when it is
 * undefined for every epoch.
 *
 * # Safety
 * Paths are NUL-terminated UTF-8; `out_best_pearson` is either null or
 * a valid destination.
 */
int32_t lexcomp_train(const char *config_json, const char *out_dir, double *out_best_pearson);

/**
 * Generates the synthetic corpus (train/trial/test TSVs plus a
 * frequency table) under `out_dir`.
 *
 * # Safety
 * Strings are NUL-terminated UTF-8.
 */
int32_t lexcomp_make_synthetic(const char *out_dir,
                               uint64_t seed,
                               uint64_t size,
                               const char *subtask);

/**
 * Scores a prediction CSV against a gold TSV; writes the overall
 * metrics into `out`.
 *
 * # Safety
 * Paths/strings are NUL-terminated UTF-8; `out` must be a valid
 * destination.
 */
int32_t lexcomp_evaluate_files(const char *preds_csv,
                               const char *gold_tsv,
                               const char *subtask,
                               struct LexcompMetrics *out);

/**
 * Averages ensemble members described by a spec JSON into a prediction
 * CSV. `data_tsv` may be null when every member is a prediction file.
 * `out_rows` (nullable) receives the number of rows written.
 *
 * # Safety
 * Paths/strings are NUL-terminated UTF-8 (or null where documented);
 * `out_rows` is either null or a valid destination.
 */
int32_t lexcomp_ensemble_files(const char *spec_json,
                               const char *data_tsv,
                               const char *subtask,
                               const char *out_csv,
                               uint64_t *out_rows);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEXCOMP_H */
