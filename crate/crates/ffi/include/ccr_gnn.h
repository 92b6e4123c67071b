#ifndef CCR_GNN_H
#define CCR_GNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CcrStatus {
  CCR_STATUS_OK = 0,
  CCR_STATUS_NULL_POINTER = 1,
  CCR_STATUS_INVALID_ARGUMENT = 2,
  CCR_STATUS_IO = 3,
  CCR_STATUS_CHECKPOINT = 4,
  CCR_STATUS_CONTRACT = 5,
  CCR_STATUS_NON_FINITE = 6,
  CCR_STATUS_BUFFER_TOO_SMALL = 7,
  CCR_STATUS_PANIC = 8,
} CcrStatus;

/**
 * A feature graph built from one vector.
 */
typedef struct CcrGraph CcrGraph;

/**
 * A loaded checkpoint.
 */
typedef struct CcrModel CcrModel;

/**
 * Macro-averaged metrics of a set of predictions.
 */
typedef struct CcrMetrics {
  double accuracy;
  double macro_precision;
  double macro_recall;
  double macro_f1;
} CcrMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty after a
 * success. Valid until the next call into this library on the same thread.
 */
const char *ccr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ccr_version(void);

/**
 * Loads a checkpoint file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CcrStatus ccr_model_load(const char *path, struct CcrModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`ccr_model_load`] not yet freed.
 */
void ccr_model_free(struct CcrModel *model);

/**
 * Encoded feature count the model expects; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ccr_model_feature_dim(const struct CcrModel *model);

/**
 * Number of rating classes; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ccr_model_num_classes(const struct CcrModel *model);

/**
 * Writes the most probable class index (lowest on ties) to `*out_class`.
 *
 * # Safety
 * `model` must be live, `x` must hold `len` values and `out_class` must be
 * writable.
 */
enum CcrStatus ccr_model_predict(const struct CcrModel *model,
                                 const double *x,
                                 size_t len,
                                 size_t *out_class);

/**
 * Writes class probabilities to `out[0..num_classes]`.
 *
 * # Safety
 * `model` must be live, `x` must hold `len` values and `out` must have room
 * for `out_len` values.
 */
enum CcrStatus ccr_model_probabilities(const struct CcrModel *model,
                                       const double *x,
                                       size_t len,
                                       double *out,
                                       size_t out_len);

/**
 * Builds the connected feature graph of `x[0..len]` into `*out`.
 *
 * # Safety
 * `x` must hold `len` values; `out` must be writable.
 */
enum CcrStatus ccr_graph_build(const double *x, size_t len, double step, struct CcrGraph **out);

/**
 * # Safety
 * `graph` must be null or a handle from [`ccr_graph_build`] not yet freed.
 */
void ccr_graph_free(struct CcrGraph *graph);

/**
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t ccr_graph_num_nodes(const struct CcrGraph *graph);

/**
 * Number of undirected edges, self-loops excluded.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t ccr_graph_num_edges(const struct CcrGraph *graph);

/**
 * Threshold at which the graph became connected; NaN for a null handle.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
double ccr_graph_threshold(const struct CcrGraph *graph);

/**
 * Writes edges as `(i, j)` pairs with `i < j`, flattened into
 * `out[0..2·num_edges]`.
 *
 * # Safety
 * `graph` must be live and `out` must have room for `out_len` values.
 */
enum CcrStatus ccr_graph_edges(const struct CcrGraph *graph, size_t *out, size_t out_len);

/**
 * Macro metrics of `len` (prediction, truth) pairs over `num_classes`.
 *
 * # Safety
 * `predictions` and `truths` must hold `len` values; `out` must be writable.
 */
enum CcrStatus ccr_macro_metrics(const size_t *predictions,
                                 const size_t *truths,
                                 size_t len,
                                 size_t num_classes,
                                 struct CcrMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CCR_GNN_H */
