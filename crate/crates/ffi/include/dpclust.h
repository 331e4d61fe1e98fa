#ifndef DPCLUST_H
#define DPCLUST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DpcStatus {
  DPC_STATUS_OK = 0,
  DPC_STATUS_NULL_POINTER = 1,
  DPC_STATUS_INVALID_ARGUMENT = 2,
  DPC_STATUS_MEMORY_OVERFLOW = 3,
  DPC_STATUS_DATA_ERROR = 4,
  DPC_STATUS_BUFFER_TOO_SMALL = 5,
  DPC_STATUS_PANIC = 6,
} DpcStatus;

typedef struct DpcDataset DpcDataset;

typedef struct DpcSolution DpcSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies `n * d` row-major coordinates and normalizes them into the ball of
 radius `lambda`.

 # Safety
 `points` must point to `n * d` readable doubles and `out` must be writable.
 */
enum DpcStatus dpc_dataset_new(const double *points,
                               uintptr_t n,
                               uintptr_t d,
                               double lambda,
                               struct DpcDataset **out);

/*
 # Safety
 `ds` must be null or a handle from [`dpc_dataset_new`] not yet freed.
 */
void dpc_dataset_free(struct DpcDataset *ds);

/*
 # Safety
 `ds` must be null or a live dataset handle.
 */
uintptr_t dpc_dataset_len(const struct DpcDataset *ds);

/*
 # Safety
 `ds` must be null or a live dataset handle.
 */
uintptr_t dpc_dataset_dim(const struct DpcDataset *ds);

/*
 Private tree k-median with the default (theory) tree parameters.

 # Safety
 `ds` must be a live dataset handle and `out` writable.
 */
enum DpcStatus dpc_kmedian(const struct DpcDataset *ds,
                           uintptr_t k,
                           double epsilon,
                           uint64_t seed,
                           struct DpcSolution **out);

/*
 Private k-means: tree bicriteria rounds followed by reverse greedy.

 # Safety
 `ds` must be a live dataset handle and `out` writable.
 */
enum DpcStatus dpc_kmeans(const struct DpcDataset *ds,
                          uintptr_t k,
                          double epsilon,
                          uint64_t seed,
                          struct DpcSolution **out);

/*
 # Safety
 `sol` must be null or a live solution handle.
 */
uintptr_t dpc_solution_num_centers(const struct DpcSolution *sol);

/*
 # Safety
 `sol` must be null or a live solution handle.
 */
uintptr_t dpc_solution_dim(const struct DpcSolution *sol);

/*
 Clustering cost in normalized coordinates; NaN for a null handle.

 # Safety
 `sol` must be null or a live solution handle.
 */
double dpc_solution_cost(const struct DpcSolution *sol);

/*
 # Safety
 `sol` must be null or a live solution handle.
 */
double dpc_solution_epsilon_spent(const struct DpcSolution *sol);

/*
 Writes the centers, in input coordinates, row-major into `buf`, which must
 hold `len >= num_centers * dim` doubles.

 # Safety
 `sol` must be a live solution handle and `buf` writable for `len` doubles.
 */
enum DpcStatus dpc_solution_centers(const struct DpcSolution *sol, double *buf, uintptr_t len);

/*
 # Safety
 `sol` must be null or a handle from a solver call not yet freed.
 */
void dpc_solution_free(struct DpcSolution *sol);

/*
 Message of the last failed call on this thread, or null. Valid until the
 next failing call on the same thread.
 */
const char *dpc_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPCLUST_H */
