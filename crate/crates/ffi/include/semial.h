#ifndef SEMIAL_H
#define SEMIAL_H

/* Generated by cbindgen; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum SemialStatus {
  SEMIAL_STATUS_OK = 0,
  SEMIAL_STATUS_NULL_POINTER = 1,
  SEMIAL_STATUS_INVALID_ARGUMENT = 2,
  SEMIAL_STATUS_IO = 3,
  SEMIAL_STATUS_PARSE = 4,
  SEMIAL_STATUS_NO_CONVERGENCE = 5,
  SEMIAL_STATUS_BUFFER_TOO_SMALL = 6,
  SEMIAL_STATUS_RUNTIME = 7,
  SEMIAL_STATUS_PANIC = 8,
} SemialStatus;

// A dataset: features plus hidden ground-truth labels.
typedef struct SemialDataset SemialDataset;

// A symmetric affinity graph with its normalized operator.
typedef struct SemialGraph SemialGraph;

// Propagation result: pseudo-labels and certainty weights for unlabeled nodes.
typedef struct SemialPropagation SemialPropagation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread; empty after a
// success. The pointer stays valid until the next call into this library
// from the same thread.
const char *semial_last_error(void);

// Library version as a static NUL-terminated string.
const char *semial_version(void);

// Loads a dataset. `format` is "csv" or "raw-f32", or NULL to guess from
// the file extension.
//
// # Safety
// `path` must be a NUL-terminated string, `format` NULL or NUL-terminated,
// and `out` a valid pointer to write the handle to.
enum SemialStatus semial_dataset_load(const char *path,
                                      const char *format,
                                      struct SemialDataset **out);

// Builds a dataset from a row-major `n x d` feature array and `n` labels in
// `0..c`.
//
// # Safety
// `features` must point to `n * d` doubles, `labels` to `n` values, and
// `out` must be valid for writes.
enum SemialStatus semial_dataset_from_arrays(const double *features,
                                             size_t n,
                                             size_t d,
                                             const uint32_t *labels,
                                             size_t c,
                                             struct SemialDataset **out);

// Number of examples, feature dimension and number of classes. Any output
// pointer may be NULL.
//
// # Safety
// `ds` must be a live dataset handle; non-NULL outputs must be writable.
enum SemialStatus semial_dataset_dims(const struct SemialDataset *ds,
                                      size_t *n,
                                      size_t *d,
                                      size_t *c);

// # Safety
// `ds` must be NULL or a handle not freed before.
void semial_dataset_free(struct SemialDataset *ds);

// Reciprocal k-NN graph on the dataset's features.
//
// # Safety
// `ds` must be a live dataset handle and `out` valid for writes.
enum SemialStatus semial_graph_build(const struct SemialDataset *ds,
                                     size_t k,
                                     struct SemialGraph **out);

// Graph on `n` nodes from `m` undirected weighted edges `(src[e], dst[e], weight[e])`.
//
// # Safety
// The three arrays must hold `m` elements each; `out` must be valid for writes.
enum SemialStatus semial_graph_from_edges(size_t n,
                                          const size_t *src,
                                          const size_t *dst,
                                          const double *weight,
                                          size_t m,
                                          struct SemialGraph **out);

// Number of nodes and undirected edges. Either output may be NULL.
//
// # Safety
// `g` must be a live graph handle; non-NULL outputs must be writable.
enum SemialStatus semial_graph_size(const struct SemialGraph *g, size_t *nodes, size_t *edges);

// Copies the undirected edges (`src < dst`, ascending) into caller arrays of
// `capacity` elements each.
//
// # Safety
// Each array must be writable for `capacity` elements.
enum SemialStatus semial_graph_edges(const struct SemialGraph *g,
                                     size_t *src,
                                     size_t *dst,
                                     double *weight,
                                     size_t capacity);

// # Safety
// `g` must be NULL or a handle not freed before.
void semial_graph_free(struct SemialGraph *g);

// Propagates `m` known labels (`labeled[i]` has class `labels[i]` in `0..c`)
// over the graph. `tol <= 0` and `max_iter == 0` select the defaults.
//
// # Safety
// `labeled` and `labels` must hold `m` elements; `out` must be valid for writes.
enum SemialStatus semial_propagate(const struct SemialGraph *g,
                                   const size_t *labeled,
                                   const uint32_t *labels,
                                   size_t m,
                                   size_t c,
                                   double alpha,
                                   double tol,
                                   size_t max_iter,
                                   struct SemialPropagation **out);

// Number of unlabeled nodes covered by the result.
//
// # Safety
// `p` must be a live propagation handle and `len` writable.
enum SemialStatus semial_propagation_len(const struct SemialPropagation *p, size_t *len);

// Copies node indices (ascending), pseudo-labels and certainty weights of the
// unlabeled nodes. Any of the arrays may be NULL to skip it.
//
// # Safety
// Non-NULL arrays must be writable for `capacity` elements.
enum SemialStatus semial_propagation_results(const struct SemialPropagation *p,
                                             size_t *indices,
                                             uint32_t *pseudo_labels,
                                             double *weights,
                                             size_t capacity);

// Copies the raw `n x c` propagation scores, row-major.
//
// # Safety
// `scores` must be writable for `capacity` elements.
enum SemialStatus semial_propagation_scores(const struct SemialPropagation *p,
                                            double *scores,
                                            size_t capacity);

// # Safety
// `p` must be NULL or a handle not freed before.
void semial_propagation_free(struct SemialPropagation *p);

// Natural-log entropy of a nonnegative vector (normalized first).
//
// # Safety
// `p` must hold `c` doubles and `out` be writable.
enum SemialStatus semial_entropy(const double *p, size_t c, double *out);

// Certainty weight `1 - H(p) / ln c`.
//
// # Safety
// `p` must hold `c` doubles and `out` be writable.
enum SemialStatus semial_certainty_weight(const double *p, size_t c, double *out);

// Runs the active learning loop. `config` is `key = value` text using the
// long flag names of `semial run` (NULL or empty for defaults). On success
// `*records_out` receives the JSON-lines records, to be released with
// [`semial_string_free`].
//
// # Safety
// Dataset handles must be live; `config` NULL or NUL-terminated;
// `records_out` writable.
enum SemialStatus semial_run(const struct SemialDataset *train,
                             const struct SemialDataset *test,
                             const char *config,
                             char **records_out);

// Releases a string returned by this library.
//
// # Safety
// `s` must be NULL or a string from this library not freed before.
void semial_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMIAL_H */
