#ifndef MTA_H
#define MTA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MtaStatus {
  MTA_STATUS_OK = 0,
  MTA_STATUS_NULL_POINTER = 1,
  MTA_STATUS_INVALID_ARGUMENT = 2,
  MTA_STATUS_IO = 3,
  MTA_STATUS_PARSE = 4,
  MTA_STATUS_CONFIG = 5,
  MTA_STATUS_SHAPE = 6,
  MTA_STATUS_CONTRACT = 7,
  MTA_STATUS_NON_FINITE = 8,
  MTA_STATUS_UNDEFINED_METRIC = 9,
  MTA_STATUS_VERSION = 10,
  MTA_STATUS_BUFFER_TOO_SMALL = 11,
  MTA_STATUS_PANIC = 12,
} MtaStatus;

/**
 * A trained model with its feature vocabulary.
 */
typedef struct MtaModel MtaModel;

/**
 * Streaming budget replay.
 */
typedef struct MtaReplay MtaReplay;

/**
 * A touch-point sequence under construction.
 */
typedef struct MtaSequence MtaSequence;

typedef struct MtaReplayReport {
  double budget;
  uint64_t conversions;
  double cost;
  uint64_t blacklisted;
  uint64_t touched;
} MtaReplayReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * Valid until the next call into the library on this thread.
 */
const char *mta_last_error(void);

const char *mta_version(void);

/**
 * Rank-sum AUC; ties count one half. Fails with `UndefinedMetric` when only
 * one class is present.
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable elements and `out` to a
 * writable double.
 */
enum MtaStatus mta_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Mean binary cross-entropy, probabilities clipped away from 0 and 1.
 *
 * # Safety
 * As for [`mta_auc`].
 */
enum MtaStatus mta_logloss(const double *probs, const uint8_t *labels, size_t n, double *out);

/**
 * Splits `total` over `n` channels in proportion to their ROI (uniformly
 * when every ROI is 0) and writes the budgets to `out_budgets`.
 *
 * # Safety
 * `channels`, `roi` and `out_budgets` must each hold `n` elements.
 */
enum MtaStatus mta_allocate_budget(const char *const *channels,
                                   const double *roi,
                                   size_t n,
                                   double total,
                                   double *out_budgets);

/**
 * # Safety
 * `id` must be a valid string; `out` must be writable.
 */
enum MtaStatus mta_sequence_new(const char *id, struct MtaSequence **out);

/**
 * Appends a touch point. `keys[i]`/`values[i]` are the extra feature
 * columns the model was trained with; unknown values map to the field's
 * unknown slot.
 *
 * # Safety
 * `seq` must come from [`mta_sequence_new`]; `keys` and `values` must hold
 * `n_features` strings each.
 */
enum MtaStatus mta_sequence_push(struct MtaSequence *seq,
                                 const char *channel,
                                 int64_t timestamp,
                                 bool click,
                                 double cost,
                                 const char *const *keys,
                                 const char *const *values,
                                 size_t n_features);

/**
 * Number of touch points; 0 for NULL.
 *
 * # Safety
 * `seq` must be NULL or live.
 */
size_t mta_sequence_len(const struct MtaSequence *seq);

/**
 * # Safety
 * `seq` must come from [`mta_sequence_new`] and not be used afterwards.
 */
void mta_sequence_free(struct MtaSequence *seq);

/**
 * Loads a model directory written by `mta train`.
 *
 * # Safety
 * `dir` must be a valid string; `out` must be writable.
 */
enum MtaStatus mta_model_load(const char *dir, struct MtaModel **out);

/**
 * Conversion probability of `seq`. When `credits` is non-NULL it receives
 * one credit per touch point and must hold at least `capacity` doubles;
 * a shorter buffer yields `BufferTooSmall`. `lambda` may be NULL.
 *
 * # Safety
 * Handles must be live; output pointers must be writable where non-NULL.
 */
enum MtaStatus mta_model_predict(const struct MtaModel *model,
                                 const struct MtaSequence *seq,
                                 double *prob,
                                 double *credits,
                                 size_t capacity,
                                 double *lambda);

/**
 * # Safety
 * `model` must come from [`mta_model_load`] and not be used afterwards.
 */
void mta_model_free(struct MtaModel *model);

/**
 * Starts a replay with the given per-channel budgets. Channels not listed
 * have budget 0.
 *
 * # Safety
 * `channels` and `budgets` must hold `n` elements; `out` must be writable.
 */
enum MtaStatus mta_replay_new(const char *const *channels,
                              const double *budgets,
                              size_t n,
                              struct MtaReplay **out);

/**
 * Feeds one event; events must arrive in time order.
 *
 * # Safety
 * `replay` must be live; strings must be valid.
 */
enum MtaStatus mta_replay_push(struct MtaReplay *replay,
                               const char *sequence_id,
                               int64_t timestamp,
                               const char *channel,
                               double cost,
                               bool converted);

/**
 * # Safety
 * `replay` must be live and `out` writable.
 */
enum MtaStatus mta_replay_report(const struct MtaReplay *replay, struct MtaReplayReport *out);

/**
 * # Safety
 * `replay` must come from [`mta_replay_new`] and not be used afterwards.
 */
void mta_replay_free(struct MtaReplay *replay);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTA_H */
