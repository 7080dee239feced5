#ifndef NOMA_H
#define NOMA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum NomaStatus {
  NOMA_STATUS_OK = 0,
  NOMA_STATUS_NULL_POINTER = 1,
  NOMA_STATUS_INVALID_ARGUMENT = 2,
  NOMA_STATUS_IO = 3,
  NOMA_STATUS_NOT_A_BUNDLE = 4,
  NOMA_STATUS_UNSUPPORTED_VERSION = 5,
  NOMA_STATUS_INTEGRITY = 6,
  NOMA_STATUS_NUMERIC = 7,
  NOMA_STATUS_PANIC = 8,
} NomaStatus;

/**
 * A neural field ready for evaluation.
 */
typedef struct NomaField NomaField;

/**
 * A loaded prior bundle.
 */
typedef struct NomaPrior NomaPrior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *noma_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *noma_version(void);

/**
 * Loads a prior file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NomaStatus noma_prior_load(const char *path, struct NomaPrior **out);

/**
 * # Safety
 * `prior` must come from [`noma_prior_load`] and not be used afterwards.
 */
void noma_prior_free(struct NomaPrior *prior);

/**
 * Category name owned by the handle; null for a null handle.
 *
 * # Safety
 * `prior` must be null or a live handle.
 */
const char *noma_prior_category(const struct NomaPrior *prior);

/**
 * Number of field parameters; 0 for a null handle.
 *
 * # Safety
 * `prior` must be null or a live handle.
 */
size_t noma_prior_param_count(const struct NomaPrior *prior);

/**
 * Grid side length `R`; the grid holds `R^3` values.
 *
 * # Safety
 * `prior` must be null or a live handle.
 */
size_t noma_prior_grid_resolution(const struct NomaPrior *prior);

/**
 * Copies the density grid (x fastest) into `out`, which holds `len` floats.
 *
 * # Safety
 * `prior` must be a live handle and `out` valid for `len` writes.
 */
enum NomaStatus noma_prior_grid_values(const struct NomaPrior *prior, float *out, size_t len);

/**
 * Density at a unit-cube point, trilinearly interpolated from the grid.
 *
 * # Safety
 * `prior` must be a live handle, `point` valid for 3 reads, `out` for one write.
 */
enum NomaStatus noma_prior_grid_sample(const struct NomaPrior *prior,
                                       const double *point,
                                       double *out);

/**
 * Vertex and triangle counts of the prior mesh.
 *
 * # Safety
 * `prior` must be a live handle; the outputs must be valid pointers.
 */
enum NomaStatus noma_prior_mesh_counts(const struct NomaPrior *prior,
                                       size_t *vertices,
                                       size_t *triangles);

/**
 * Builds a field from the prior's architecture and parameters.
 *
 * # Safety
 * `prior` must be a live handle and `out` a valid pointer.
 */
enum NomaStatus noma_field_from_prior(const struct NomaPrior *prior, struct NomaField **out);

/**
 * # Safety
 * `field` must come from [`noma_field_from_prior`] and not be used afterwards.
 */
void noma_field_free(struct NomaField *field);

/**
 * Evaluates `n` unit-cube points (`xyz` interleaved). Writes `n` densities
 * to `sigma` and, when `rgb` is not null, `3n` colors.
 *
 * # Safety
 * `field` must be a live handle; `points` valid for `3n` reads, `sigma` for
 * `n` writes and `rgb`, if not null, for `3n` writes.
 */
enum NomaStatus noma_field_eval(struct NomaField *field,
                                const float *points,
                                size_t n,
                                float *sigma,
                                float *rgb);

/**
 * Symmetric Chamfer distance between two point clouds (`xyz` interleaved).
 *
 * # Safety
 * `a` valid for `3na` reads, `b` for `3nb`, `out` for one write.
 */
enum NomaStatus noma_chamfer(const double *a, size_t na, const double *b, size_t nb, double *out);

/**
 * Fraction of `gt` points within `tau` of `rec`.
 *
 * # Safety
 * `gt` valid for `3ngt` reads, `rec` for `3nrec`, `out` for one write.
 */
enum NomaStatus noma_completion_ratio(const double *gt,
                                      size_t ngt,
                                      const double *rec,
                                      size_t nrec,
                                      double tau,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NOMA_H */
