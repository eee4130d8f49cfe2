#ifndef KGE_H
#define KGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which evaluation split to rank.
 */
typedef enum KgeSplit {
  KGE_SPLIT_TEST = 0,
  KGE_SPLIT_VALID = 1,
} KgeSplit;

/**
 * Result code of every call.
 */
typedef enum KgeStatus {
  KGE_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  KGE_STATUS_NULL_ARGUMENT = 1,
  /**
   * Bad argument: not UTF-8, an invalid config, an out-of-range id.
   */
  KGE_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A file could not be read or written, or is malformed.
   */
  KGE_STATUS_IO = 3,
  /**
   * Checkpoint and dataset vocabularies differ.
   */
  KGE_STATUS_VOCABULARY_MISMATCH = 4,
  /**
   * An entity or relation name is not in the vocabulary.
   */
  KGE_STATUS_UNKNOWN_NAME = 5,
  /**
   * Training produced a non-finite loss.
   */
  KGE_STATUS_DIVERGED = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  KGE_STATUS_INTERNAL = 7,
} KgeStatus;

/**
 * How ties with the target are counted.
 */
typedef enum KgeTiePolicy {
  KGE_TIE_POLICY_MEAN = 0,
  KGE_TIE_POLICY_PESSIMISTIC = 1,
  KGE_TIE_POLICY_OPTIMISTIC = 2,
} KgeTiePolicy;

/**
 * A loaded train/valid/test split with its vocabulary.
 */
typedef struct KgeDataset KgeDataset;

/**
 * A trained model together with its checkpoint.
 */
typedef struct KgeModel KgeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *kge_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *kge_version(void);

/**
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void kge_string_free(char *s);

/**
 * Load three tab-separated triple files.
 *
 * # Safety
 * Paths are NUL-terminated strings; `out` is valid for one write.
 */
enum KgeStatus kge_dataset_load(const char *train,
                                const char *valid,
                                const char *test,
                                struct KgeDataset **out);

/**
 * # Safety
 * `ds` is null or a dataset handle not yet freed.
 */
void kge_dataset_free(struct KgeDataset *ds);

/**
 * # Safety
 * `ds` is a live dataset handle; the out pointers are valid for one write.
 */
enum KgeStatus kge_dataset_size(const struct KgeDataset *ds, size_t *entities, size_t *relations);

/**
 * Dataset statistics as a JSON object; free with [`kge_string_free`].
 *
 * # Safety
 * `ds` is a live dataset handle; `out` is valid for one write.
 */
enum KgeStatus kge_dataset_stats_json(const struct KgeDataset *ds, char **out);

/**
 * Train from a flat JSON config (same keys as the `kge train` config file).
 *
 * # Safety
 * `ds` is a live dataset handle, `config_json` a NUL-terminated string,
 * `out` valid for one write.
 */
enum KgeStatus kge_model_train(const struct KgeDataset *ds,
                               const char *config_json,
                               struct KgeModel **out);

/**
 * # Safety
 * `path` is a NUL-terminated string; `out` is valid for one write.
 */
enum KgeStatus kge_model_load(const char *path, struct KgeModel **out);

/**
 * # Safety
 * `m` is a live model handle; `path` is a NUL-terminated string.
 */
enum KgeStatus kge_model_save(const struct KgeModel *m, const char *path);

/**
 * # Safety
 * `m` is null or a model handle not yet freed.
 */
void kge_model_free(struct KgeModel *m);

/**
 * Hex SHA-256 of the embedding arrays; free with [`kge_string_free`].
 *
 * # Safety
 * `m` is a live model handle; `out` is valid for one write.
 */
enum KgeStatus kge_model_embedding_digest(const struct KgeModel *m, char **out);

/**
 * Number of entities the model was trained on.
 *
 * # Safety
 * `m` is a live model handle; `out` is valid for one write.
 */
enum KgeStatus kge_model_num_entities(const struct KgeModel *m, size_t *out);

/**
 * Entity id for a name.
 *
 * # Safety
 * `m` is a live model handle, `name` a NUL-terminated string, `out` valid
 * for one write.
 */
enum KgeStatus kge_model_entity_id(const struct KgeModel *m, const char *name, size_t *out);

/**
 * Borrowed entity name, valid while the model handle lives.
 *
 * # Safety
 * `m` is a live model handle; `out` is valid for one write.
 */
enum KgeStatus kge_model_entity_name(const struct KgeModel *m, size_t id, const char **out);

/**
 * Score of one named triple; higher is more plausible.
 *
 * # Safety
 * `m` is a live model handle, the names NUL-terminated strings, `out`
 * valid for one write.
 */
enum KgeStatus kge_model_score(const struct KgeModel *m,
                               const char *head,
                               const char *relation,
                               const char *tail,
                               double *out);

/**
 * Best `k` tails for `(head, relation, ?)`, best first.
 *
 * Writes up to `k` ids and scores into caller buffers of length `k` and
 * the count written into `n_out`. With a non-null `filter` dataset, tails
 * already known true there are skipped.
 *
 * # Safety
 * `m` is a live model handle; `filter` is null or a live dataset handle;
 * `ids` and `scores` hold at least `k` elements; `n_out` is valid for one
 * write.
 */
enum KgeStatus kge_model_predict_tails(const struct KgeModel *m,
                                       size_t head,
                                       size_t relation,
                                       size_t k,
                                       const struct KgeDataset *filter,
                                       size_t *ids,
                                       double *scores,
                                       size_t *n_out);

/**
 * Filtered and raw metrics as a JSON object; free with
 * [`kge_string_free`]. The dataset must share the model's vocabulary.
 * `split` takes a [`KgeSplit`] value and `policy` a [`KgeTiePolicy`] value.
 *
 * # Safety
 * `m` and `ds` are live handles; `out` is valid for one write.
 */
enum KgeStatus kge_model_evaluate(const struct KgeModel *m,
                                  const struct KgeDataset *ds,
                                  int32_t split,
                                  int32_t policy,
                                  char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGE_H */
