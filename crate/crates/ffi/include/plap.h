#ifndef PLAP_H
#define PLAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PlapStatus {
  PLAP_STATUS_OK = 0,
  PLAP_STATUS_NULL_POINTER = 1,
  PLAP_STATUS_INVALID_ARGUMENT = 2,
  PLAP_STATUS_INFEASIBLE_CONSTRAINTS = 3,
  PLAP_STATUS_UNSUPPORTED = 4,
  PLAP_STATUS_INVALID_PROFILE = 5,
  PLAP_STATUS_SINGULAR_SYSTEM = 6,
  PLAP_STATUS_NO_DATA = 7,
  PLAP_STATUS_CONFIG = 8,
  PLAP_STATUS_IO = 9,
  // The buffer passed in is shorter than the result.
  PLAP_STATUS_BUFFER_TOO_SMALL = 10,
  PLAP_STATUS_PANIC = 11,
} PlapStatus;

typedef enum PlapKernel {
  PLAP_KERNEL_INDICATOR = 0,
  // `exp(-t)` truncated at 40; the support argument is ignored.
  PLAP_KERNEL_EXPONENTIAL = 1,
} PlapKernel;

typedef enum PlapModel {
  PLAP_MODEL_CONSTRAINED = 0,
  // Uses `q` and `lambda`.
  PLAP_MODEL_PENALIZED = 1,
  // Uses `radius_multiplier`.
  PLAP_MODEL_IMPROVED = 2,
} PlapModel;

// Sampled point cloud; labeled points occupy the first indices.
typedef struct PlapCloud PlapCloud;

// ε-neighborhood graph over a cloud.
typedef struct PlapGraph PlapGraph;

typedef struct PlapSolveOptions {
  size_t max_sweeps;
  double rel_energy_tol;
  double coord_tol;
  bool clip_to_labels;
} PlapSolveOptions;

typedef struct PlapSolveReport {
  double final_energy;
  size_t sweeps_used;
  bool converged;
  bool graph_connected;
} PlapSolveReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *plap_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *plap_version(void);

struct PlapSolveOptions plap_solve_options_default(void);

// `σ_η = ∫ η(|h|) |h_1|^p dh` for the given profile.
//
// # Safety
// `out` must be a valid pointer to a `double`.
enum PlapStatus plap_sigma_eta(enum PlapKernel kernel,
                               double support,
                               double p,
                               size_t dim,
                               double *out);

// Samples `n` points uniformly on the box `[lower, upper]` of dimension
// `dim`, with the `n_labels` labeled points first. `label_positions` holds
// `n_labels * dim` coordinates row by row.
//
// # Safety
// Array arguments must point to at least the stated number of elements and
// `out` to a writable handle slot.
enum PlapStatus plap_cloud_sample(size_t dim,
                                  const double *lower,
                                  const double *upper,
                                  const double *label_positions,
                                  const double *label_values,
                                  size_t n_labels,
                                  size_t n,
                                  uint64_t seed,
                                  struct PlapCloud **out);

// # Safety
// `cloud` must be null or a handle from `plap_cloud_sample` not yet freed.
void plap_cloud_free(struct PlapCloud *cloud);

// Number of points, or 0 for a null handle.
//
// # Safety
// `cloud` must be null or a live handle.
size_t plap_cloud_len(const struct PlapCloud *cloud);

// # Safety
// `cloud` must be null or a live handle.
size_t plap_cloud_dim(const struct PlapCloud *cloud);

// Copies the `len * dim` coordinates, row by row, into `coords`.
//
// # Safety
// `cloud` must be a live handle and `coords` must have room for `capacity`
// doubles.
enum PlapStatus plap_cloud_coords(const struct PlapCloud *cloud, double *coords, size_t capacity);

// Smallest ε for which the graph on `cloud` is connected.
//
// # Safety
// `cloud` must be a live handle and `out` a valid pointer.
enum PlapStatus plap_connectivity_radius(const struct PlapCloud *cloud,
                                         enum PlapKernel kernel,
                                         double support,
                                         double *out);

// Builds the ε-neighborhood graph. The graph keeps its own reference to the
// cloud, so the cloud handle may be freed afterwards.
//
// # Safety
// `cloud` must be a live handle and `out` a writable handle slot.
enum PlapStatus plap_graph_build(const struct PlapCloud *cloud,
                                 enum PlapKernel kernel,
                                 double support,
                                 double eps,
                                 struct PlapGraph **out);

// # Safety
// `graph` must be null or a handle from `plap_graph_build` not yet freed.
void plap_graph_free(struct PlapGraph *graph);

// Number of undirected edges, or 0 for a null handle.
//
// # Safety
// `graph` must be null or a live handle.
size_t plap_graph_num_edges(const struct PlapGraph *graph);

// # Safety
// `graph` must be null or a live handle.
bool plap_graph_is_connected(const struct PlapGraph *graph);

// Normalized p-Dirichlet energy of `f` (one value per node).
//
// # Safety
// `graph` must be a live handle, `f` must hold `len` doubles and `out` must
// be a valid pointer.
enum PlapStatus plap_dirichlet_energy(const struct PlapGraph *graph,
                                      const double *f,
                                      size_t len,
                                      double p,
                                      double *out);

// Solves the chosen model with the labels of the graph's cloud and writes
// the node values into `solution`. `options` and `report` may be null.
//
// # Safety
// `graph` must be a live handle, `solution` must have room for `capacity`
// doubles, and non-null `options`/`report` must be valid pointers.
enum PlapStatus plap_solve(const struct PlapGraph *graph,
                           enum PlapModel model,
                           double p,
                           double q,
                           double lambda,
                           double radius_multiplier,
                           const struct PlapSolveOptions *options,
                           double *solution,
                           size_t capacity,
                           struct PlapSolveReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLAP_H */
