#ifndef LMPRIOR_H
#define LMPRIOR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a fallible call.
typedef enum LmpStatus {
  LMP_STATUS_OK = 0,
  // A required pointer argument was null.
  LMP_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  LMP_STATUS_INVALID_STRING = 2,
  // A parameter was out of its domain.
  LMP_STATUS_INVALID_PARAMETER = 3,
  // Input data could not be read or did not validate.
  LMP_STATUS_INVALID_DATA = 4,
  // The computation failed (degenerate prior, non-finite values).
  LMP_STATUS_NUMERIC = 5,
  // An internal error; the library state is unaffected.
  LMP_STATUS_INTERNAL = 6,
} LmpStatus;

typedef enum LmpKernel {
  LMP_KERNEL_GLOBAL = 0,
  LMP_KERNEL_LOCAL = 1,
} LmpKernel;

typedef enum LmpPrior {
  LMP_PRIOR_NONE = 0,
  LMP_PRIOR_L2 = 1,
  LMP_PRIOR_GRAPH = 2,
} LmpPrior;

// An interaction log with its split, cold-start tags and optional item
// embeddings.
typedef struct LmpDataset LmpDataset;

// A sparse item similarity graph.
typedef struct LmpGraph LmpGraph;

// A trained model.
typedef struct LmpModel LmpModel;

// Training settings for the matrix factorization model.
typedef struct LmpMfConfig {
  size_t dim;
  double lr;
  size_t epochs;
  size_t batch;
  double rho;
  enum LmpPrior prior;
  size_t negatives;
  uint64_t seed;
  // Gradient clipping norm; zero or negative disables clipping.
  double clip_norm;
} LmpMfConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *lmp_last_error(void);

// Cold-start threshold used when callers have no preference.
size_t lmp_default_cold_threshold(void);

// Loads a dataset.
//
// `data` is a `user item timestamp` text file or a `log.json`. `embeddings`
// may be null. A null `items` means `items.tsv` next to the embeddings.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum LmpStatus lmp_dataset_load(const char *data,
                                const char *embeddings,
                                const char *items,
                                bool header,
                                size_t cold_threshold,
                                struct LmpDataset **out);

// # Safety
// `ds` must be null or a pointer from [`lmp_dataset_load`].
size_t lmp_dataset_num_users(const struct LmpDataset *ds);

// # Safety
// `ds` must be null or a pointer from [`lmp_dataset_load`].
size_t lmp_dataset_num_items(const struct LmpDataset *ds);

// # Safety
// `ds` must be null or a pointer from [`lmp_dataset_load`] not yet freed.
void lmp_dataset_free(struct LmpDataset *ds);

// Builds the prior graph from the dataset's embeddings. `k == 0` selects
// `floor(sqrt(N))`.
//
// # Safety
// `ds` must come from [`lmp_dataset_load`]; `out` must be writable.
enum LmpStatus lmp_graph_build(const struct LmpDataset *ds,
                               size_t k,
                               enum LmpKernel kernel,
                               double eps,
                               struct LmpGraph **out);

// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum LmpStatus lmp_graph_load(const char *path, struct LmpGraph **out);

// # Safety
// `g` must come from this library; `path` must be NUL-terminated.
enum LmpStatus lmp_graph_save(const struct LmpGraph *g, const char *path);

// Number of stored undirected edges.
//
// # Safety
// `g` must be null or come from this library.
size_t lmp_graph_num_edges(const struct LmpGraph *g);

// Symmetric similarity between two items; zero for non-neighbors.
//
// # Safety
// `g` must come from this library; `out` must be writable.
enum LmpStatus lmp_graph_weight(const struct LmpGraph *g, size_t i, size_t k, double *out);

// # Safety
// `g` must be null or a pointer from this library not yet freed.
void lmp_graph_free(struct LmpGraph *g);

// Default matrix factorization settings.
struct LmpMfConfig lmp_mf_config_default(void);

// Trains a matrix factorization model on the dataset's training split.
// `graph` may be null unless `cfg->prior` is `Graph`.
//
// # Safety
// Pointers must come from this library (or be a valid config); `out` must
// be writable.
enum LmpStatus lmp_mf_train(const struct LmpDataset *ds,
                            const struct LmpGraph *graph,
                            const struct LmpMfConfig *cfg,
                            struct LmpModel **out);

// Loads a checkpoint of either model kind.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum LmpStatus lmp_model_load(const char *path, struct LmpModel **out);

// # Safety
// `m` must come from this library; `path` must be NUL-terminated.
enum LmpStatus lmp_model_save(const struct LmpModel *m, const char *path);

// Preference score of `user` for `item` under a matrix factorization
// model.
//
// # Safety
// `m` must come from this library; `out` must be writable.
enum LmpStatus lmp_model_score(const struct LmpModel *m, size_t user, size_t item, double *out);

// Evaluates a model on the dataset's test split and writes the report as
// CSV to `csv_path`.
//
// # Safety
// `ks` must point to `num_ks` values; other pointers as above.
enum LmpStatus lmp_evaluate(const struct LmpModel *m,
                            const struct LmpDataset *ds,
                            const size_t *ks,
                            size_t num_ks,
                            bool mask_seen,
                            const char *csv_path);

// # Safety
// `m` must be null or a pointer from this library not yet freed.
void lmp_model_free(struct LmpModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMPRIOR_H */
