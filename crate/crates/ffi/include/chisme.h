#ifndef CHISME_H
#define CHISME_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ChismeStatus {
  CHISME_STATUS_OK = 0,
  CHISME_STATUS_NULL_POINTER = 1,
  CHISME_STATUS_INVALID_ARGUMENT = 2,
  CHISME_STATUS_INVALID_CONFIG = 3,
  CHISME_STATUS_LENGTH_MISMATCH = 4,
  CHISME_STATUS_NON_FINITE = 5,
  CHISME_STATUS_RUNTIME = 6,
  CHISME_STATUS_OUT_OF_RANGE = 7,
  CHISME_STATUS_PANIC = 8,
} ChismeStatus;

/**
 * A validated experiment configuration.
 */
typedef struct ChismeExperiment ChismeExperiment;

/**
 * Per-round metrics of a finished run.
 */
typedef struct ChismeMetrics ChismeMetrics;

/**
 * One Chisme client driven by the caller.
 */
typedef struct ChismeNode ChismeNode;

/**
 * Round summary. Similarities are NaN when not measured.
 */
typedef struct ChismeRoundSummary {
  uint64_t round;
  double mean_loss;
  double std_loss;
  uint64_t messages_sent;
  uint64_t messages_delivered;
  uint64_t merges_applied;
  double intra_sim;
  double inter_sim;
} ChismeRoundSummary;

/**
 * Quantities computed while merging one message.
 */
typedef struct ChismeMergeTrace {
  double alpha;
  double scaled_similarity;
  double omega;
  double eta;
} ChismeMergeTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *chisme_last_error(void);

/**
 * Parses an experiment from TOML text. Missing keys take their defaults.
 */
enum ChismeStatus chisme_experiment_from_toml(const char *toml, struct ChismeExperiment **out);

void chisme_experiment_free(struct ChismeExperiment *exp);

enum ChismeStatus chisme_experiment_set_seed(struct ChismeExperiment *exp, uint64_t seed);

/**
 * `name` is one of chisme, gossip, dfl, cossimdfl, fedavg, local.
 */
enum ChismeStatus chisme_experiment_set_paradigm(struct ChismeExperiment *exp, const char *name);

enum ChismeStatus chisme_experiment_message_budget(const struct ChismeExperiment *exp,
                                                   uint64_t *out);

enum ChismeStatus chisme_experiment_run(const struct ChismeExperiment *exp,
                                        struct ChismeMetrics **out);

void chisme_metrics_free(struct ChismeMetrics *m);

/**
 * Number of rounds, or 0 for a null handle.
 */
size_t chisme_metrics_round_count(const struct ChismeMetrics *m);

/**
 * `index` is 0-based; the summary's `round` field is 1-based.
 */
enum ChismeStatus chisme_metrics_round(const struct ChismeMetrics *m,
                                       size_t index,
                                       struct ChismeRoundSummary *out);

enum ChismeStatus chisme_metrics_client_loss(const struct ChismeMetrics *m,
                                             size_t index,
                                             size_t client,
                                             double *out);

/**
 * Writes a newly allocated CSV string to `*out`; release it with
 * [`chisme_string_free`].
 */
enum ChismeStatus chisme_metrics_to_csv(const struct ChismeMetrics *m, char **out);

void chisme_string_free(char *s);

/**
 * New client `id` starting from `init` with zero experience.
 */
enum ChismeStatus chisme_node_new(uint64_t id,
                                  const double *init,
                                  size_t len,
                                  struct ChismeNode **out);

void chisme_node_free(struct ChismeNode *node);

size_t chisme_node_param_count(const struct ChismeNode *node);

/**
 * Copies the current parameters into `out`, which must hold `len` values.
 */
enum ChismeStatus chisme_node_params(const struct ChismeNode *node, double *out, size_t len);

enum ChismeStatus chisme_node_experience(const struct ChismeNode *node, double *out);

/**
 * Records a local training step done by the caller: the current
 * parameters become the checkpoint and `trained` becomes current.
 */
enum ChismeStatus chisme_node_commit_training(struct ChismeNode *node,
                                              const double *trained,
                                              size_t len,
                                              double experience_gain);

/**
 * Merges a peer's model. `trace` may be null.
 */
enum ChismeStatus chisme_node_receive(struct ChismeNode *node,
                                      uint64_t sender,
                                      const double *params,
                                      size_t len,
                                      double experience,
                                      struct ChismeMergeTrace *trace);

/**
 * Merge weight from experience influence `alpha` and scaled similarity `s`.
 */
double chisme_combined_influence(double alpha, double s);

enum ChismeStatus chisme_scaled_similarity(const double *a,
                                           const double *b,
                                           size_t len,
                                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHISME_H */
