#ifndef COLDFED_H
#define COLDFED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ColdfedStatus {
  COLDFED_STATUS_OK = 0,
  COLDFED_STATUS_NULL_POINTER = 1,
  COLDFED_STATUS_INVALID_ARGUMENT = 2,
  COLDFED_STATUS_CONFIG = 3,
  COLDFED_STATUS_IO = 4,
  COLDFED_STATUS_NUMERICAL = 5,
  COLDFED_STATUS_CHECKPOINT = 6,
  COLDFED_STATUS_DATA = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  COLDFED_STATUS_INTERNAL = 99,
} ColdfedStatus;

/**
 * Parsed run configuration.
 */
typedef struct ColdfedConfig ColdfedConfig;

/**
 * A federation in memory, advanced one round at a time.
 */
typedef struct ColdfedSimulator ColdfedSimulator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message for the last failed call on this thread, or NULL.
 */
const char *coldfed_last_error(void);

/**
 * Parses `key = value` config text into a new handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum ColdfedStatus coldfed_config_parse(const char *text, struct ColdfedConfig **out);

/**
 * Overrides the root seed (and the generator seed tied to it).
 *
 * # Safety
 * `config` must come from `coldfed_config_parse`.
 */
enum ColdfedStatus coldfed_config_set_seed(struct ColdfedConfig *config, uint64_t seed);

/**
 * Overrides the output directory.
 *
 * # Safety
 * `config` must come from `coldfed_config_parse`; `dir` must be a
 * NUL-terminated string.
 */
enum ColdfedStatus coldfed_config_set_out(struct ColdfedConfig *config, const char *dir);

/**
 * # Safety
 * `config` must be NULL or come from `coldfed_config_parse`, and not be
 * used afterwards.
 */
void coldfed_config_free(struct ColdfedConfig *config);

/**
 * Runs one CLI command (`gen-data`, `train`, `infer`, `eval`, `attack`,
 * `sweep`), writing its files under the configured output directory.
 *
 * # Safety
 * `config` must come from `coldfed_config_parse`; `command` must be a
 * NUL-terminated string.
 */
enum ColdfedStatus coldfed_run_command(const struct ColdfedConfig *config, const char *command);

/**
 * Loads the configured data and builds a simulator at round 0.
 *
 * # Safety
 * `config` must come from `coldfed_config_parse`; `out` must be writable.
 */
enum ColdfedStatus coldfed_simulator_new(const struct ColdfedConfig *config,
                                         struct ColdfedSimulator **out);

/**
 * # Safety
 * `sim` must be NULL or come from `coldfed_simulator_new`, and not be used
 * afterwards.
 */
void coldfed_simulator_free(struct ColdfedSimulator *sim);

/**
 * Runs one round; writes the mean client loss if `mean_client_loss` is not
 * NULL.
 *
 * # Safety
 * `sim` must come from `coldfed_simulator_new`.
 */
enum ColdfedStatus coldfed_simulator_run_round(struct ColdfedSimulator *sim,
                                               double *mean_client_loss);

/**
 * Completed rounds, cold-item count and embedding width.
 *
 * # Safety
 * `sim` must come from `coldfed_simulator_new`; each out pointer may be
 * NULL.
 */
enum ColdfedStatus coldfed_simulator_info(const struct ColdfedSimulator *sim,
                                          size_t *rounds,
                                          size_t *cold_items,
                                          size_t *dim);

/**
 * Generates the cold items' embeddings into `out`, row-major, in ascending
 * item order. `len` must equal cold items × dim.
 *
 * # Safety
 * `sim` must come from `coldfed_simulator_new`; `out` must point to `len`
 * writable doubles.
 */
enum ColdfedStatus coldfed_simulator_generate_cold(const struct ColdfedSimulator *sim,
                                                   bool stochastic,
                                                   double *out,
                                                   size_t len);

/**
 * Cold-start recall@k with deterministically generated cold embeddings.
 *
 * # Safety
 * `sim` must come from `coldfed_simulator_new`; `out` must be writable.
 */
enum ColdfedStatus coldfed_simulator_cold_recall(const struct ColdfedSimulator *sim,
                                                 size_t k,
                                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLDFED_H */
