#ifndef ANCHORSIEVE_H
#define ANCHORSIEVE_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum {
  AsvOk = 0,
  /**
   * Filesystem or network I/O failed.
   */
  AsvErrIo = 1,
  /**
   * A file exists but is not a valid artifact (magic, version, layout).
   */
  AsvErrFormat = 2,
  /**
   * Invalid argument or input data.
   */
  AsvErrInput = 3,
  /**
   * Numeric preconditions violated (zero vectors, too few samples).
   */
  AsvErrMath = 4,
  /**
   * Configuration file problem.
   */
  AsvErrConfig = 5,
  /**
   * A null pointer was passed where data was required.
   */
  AsvErrNull = 6,
  /**
   * The library panicked; state may be inconsistent.
   */
  AsvErrPanic = 7,
} AsvStatus;

/**
 * Opaque index handle.
 */
typedef struct AsvIndex AsvIndex;

/**
 * Opaque embedding matrix handle.
 */
typedef struct AsvMatrix AsvMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *asv_version(void);

/**
 * Copy the last error message for this thread into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null (length query).
 */
uintptr_t asv_last_error(char *buf, uintptr_t cap);

/**
 * Load an embedding file into a new matrix handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
AsvStatus asv_matrix_load(const char *path, AsvMatrix **out);

/**
 * Save a matrix to an embedding file.
 *
 * # Safety
 * `matrix` must be a live handle from this library; `path` NUL-terminated.
 */
AsvStatus asv_matrix_save(const AsvMatrix *matrix, const char *path);

/**
 * Release a matrix handle. Null is a no-op.
 *
 * # Safety
 * `matrix` must come from this library and not be freed twice.
 */
void asv_matrix_free(AsvMatrix *matrix);

/**
 * Row count of a matrix; 0 for null.
 *
 * # Safety
 * `matrix` must be a live handle or null.
 */
uintptr_t asv_matrix_count(const AsvMatrix *matrix);

/**
 * Dimension of a matrix; 0 for null.
 *
 * # Safety
 * `matrix` must be a live handle or null.
 */
uintptr_t asv_matrix_dim(const AsvMatrix *matrix);

/**
 * Copy row `row` into `buf` (which must hold `dim` floats).
 *
 * # Safety
 * `matrix` live handle; `buf` points to at least `dim` writable floats.
 */
AsvStatus asv_matrix_row(const AsvMatrix *matrix, uintptr_t row, float *buf);

/**
 * Unit-normalize `len` floats in place.
 *
 * # Safety
 * `v` must point to `len` readable and writable floats.
 */
AsvStatus asv_l2_normalize(float *v, uintptr_t len);

/**
 * Cosine similarity of two unit vectors of equal length.
 *
 * # Safety
 * `a` and `b` point to `len` readable floats; `out` is writable.
 */
AsvStatus asv_cosine_sim(const float *a, const float *b, uintptr_t len, float *out);

/**
 * Build an IVF index over a matrix. `nlist`, `nprobe`, `m`, and
 * `kmeans_max_iter` of 0 pick the desk-scale defaults.
 *
 * # Safety
 * `matrix` live handle; `out` valid pointer.
 */
AsvStatus asv_index_build(const AsvMatrix *matrix,
                          uintptr_t nlist,
                          uintptr_t nprobe,
                          bool pq_enabled,
                          uintptr_t m,
                          uint64_t seed,
                          uintptr_t kmeans_max_iter,
                          AsvIndex **out);

/**
 * Save an index to a file.
 *
 * # Safety
 * `index` live handle; `path` NUL-terminated.
 */
AsvStatus asv_index_save(const AsvIndex *index, const char *path);

/**
 * Load an index file into a new handle.
 *
 * # Safety
 * `path` NUL-terminated; `out` valid pointer.
 */
AsvStatus asv_index_load(const char *path, AsvIndex **out);

/**
 * Release an index handle. Null is a no-op.
 *
 * # Safety
 * `index` must come from this library and not be freed twice.
 */
void asv_index_free(AsvIndex *index);

/**
 * Indexed vector count; 0 for null.
 *
 * # Safety
 * `index` must be a live handle or null.
 */
uintptr_t asv_index_count(const AsvIndex *index);

/**
 * Query the index. `ids` and `similarities` must hold `k` entries each;
 * `*out_len` receives the number actually written (fewer than `k` only
 * when fewer candidates were scanned). `nprobe` of 0 uses the stored value.
 *
 * # Safety
 * Buffers must be writable for `k` entries; `query` readable for `dim`.
 */
AsvStatus asv_index_query(const AsvIndex *index,
                          const float *query,
                          uintptr_t dim,
                          uintptr_t k,
                          uintptr_t nprobe,
                          uint64_t *ids,
                          float *similarities,
                          uintptr_t *out_len);

/**
 * Exact top-k scan over a matrix; the oracle the index is judged against.
 *
 * # Safety
 * Same buffer contract as `asv_index_query`.
 */
AsvStatus asv_brute_force_topk(const AsvMatrix *matrix,
                               const float *query,
                               uintptr_t dim,
                               uintptr_t k,
                               uint64_t *ids,
                               float *similarities,
                               uintptr_t *out_len);

/**
 * Run the full extraction pipeline from a config file, writing
 * `manifest.csv` and `stats.txt` into the config's output directory.
 *
 * # Safety
 * `config_path` must be NUL-terminated.
 */
AsvStatus asv_run_pipeline(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANCHORSIEVE_H */
