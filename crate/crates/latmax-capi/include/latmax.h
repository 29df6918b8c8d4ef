/* C ABI for the latmax peak inference library. */

#ifndef LATMAX_H
#define LATMAX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define LATMAX_OK 0

/**
 * Invalid argument (null pointer, bad range, bad enum value).
 */
#define LATMAX_ERR_INVALID 2

/**
 * Numeric failure (non-PSD covariance, quadrature, degenerate sampler).
 */
#define LATMAX_ERR_NUMERIC 3

/**
 * I/O or file-format failure.
 */
#define LATMAX_ERR_IO 4

/**
 * Unexpected internal failure.
 */
#define LATMAX_ERR_INTERNAL 5

/**
 * Opaque neighborhood covariance handle.
 */
typedef struct LatmaxCov LatmaxCov;

/**
 * Opaque Monte Carlo sample-set handle.
 */
typedef struct LatmaxSampleSet LatmaxSampleSet;

/**
 * Opaque lookup-table handle.
 */
typedef struct LatmaxTable LatmaxTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes, or be null.
 */
size_t latmax_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *latmax_version(void);

/**
 * Converts a kernel FWHM (in voxels) to the adjacent-voxel correlation.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int latmax_fwhm_to_rho(double fwhm, double *out);

/**
 * Converts an adjacent-voxel correlation to the kernel FWHM (in voxels).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int latmax_rho_to_fwhm(double rho, double *out);

/**
 * Builds the closed-form fully connected covariance rho^{||s-t||^2}.
 *
 * # Safety
 * `out` must be a valid pointer; the handle must be released with
 * `latmax_cov_free`.
 */
int latmax_cov_kronecker(double rho, uint32_t dim, struct LatmaxCov **out);

/**
 * Order (k + 1) of the covariance.
 *
 * # Safety
 * `cov` must be a live handle; `out` must be valid.
 */
int latmax_cov_order(const struct LatmaxCov *cov, uint32_t *out);

/**
 * Reads entry (i, j) of the covariance matrix.
 *
 * # Safety
 * `cov` must be a live handle; `out` must be valid.
 */
int latmax_cov_entry(const struct LatmaxCov *cov, uint32_t i, uint32_t j, double *out);

/**
 * Releases a covariance handle. Null is a no-op.
 *
 * # Safety
 * `cov` must be a handle from this library, not yet freed.
 */
void latmax_cov_free(struct LatmaxCov *cov);

/**
 * Runs the Monte Carlo sampler. `model` 0 = Gaussian, 1 = multivariate t
 * with `nu` degrees of freedom.
 *
 * # Safety
 * `cov` must be a live handle; `out` must be valid; release the result with
 * `latmax_sampleset_free`.
 */
int latmax_sample(const struct LatmaxCov *cov,
                  int model,
                  uint64_t nu,
                  uint64_t target_n,
                  uint64_t max_m,
                  uint64_t seed,
                  struct LatmaxSampleSet **out);

/**
 * Number of accepted heights.
 *
 * # Safety
 * `set` must be a live handle; `out` must be valid.
 */
int latmax_sampleset_len(const struct LatmaxSampleSet *set, uint64_t *out);

/**
 * Number of attempts consumed.
 *
 * # Safety
 * `set` must be a live handle; `out` must be valid.
 */
int latmax_sampleset_attempted(const struct LatmaxSampleSet *set, uint64_t *out);

/**
 * Empirical CDF at `u`.
 *
 * # Safety
 * `set` must be a live handle; `out` must be valid.
 */
int latmax_sampleset_cdf(const struct LatmaxSampleSet *set, double u, double *out);

/**
 * Peak p-value at `u`; `censored` (may be null) receives 1 when the value
 * was right-censored at 1/(N+1).
 *
 * # Safety
 * `set` must be a live handle; `out` must be valid.
 */
int latmax_sampleset_pvalue(const struct LatmaxSampleSet *set,
                            double u,
                            double *out,
                            int *censored);

/**
 * Writes the sample set to a file.
 *
 * # Safety
 * `set` must be a live handle; `path` a NUL-terminated UTF-8 string.
 */
int latmax_sampleset_save(const struct LatmaxSampleSet *set, const char *path);

/**
 * Loads a sample set from a file.
 *
 * # Safety
 * `path` must be NUL-terminated UTF-8; `out` valid; release with
 * `latmax_sampleset_free`.
 */
int latmax_sampleset_load(const char *path, struct LatmaxSampleSet **out);

/**
 * Releases a sample-set handle. Null is a no-op.
 *
 * # Safety
 * `set` must be a handle from this library, not yet freed.
 */
void latmax_sampleset_free(struct LatmaxSampleSet *set);

/**
 * ADLM peak p-value for a partially connected interior voxel with the given
 * per-axis correlations.
 *
 * # Safety
 * `rhos` must point to `dim` doubles; `out` must be valid.
 */
int latmax_adlm_pvalue(const double *rhos, size_t dim, double u, double *out);

/**
 * Loads a lookup table from a file.
 *
 * # Safety
 * `path` must be NUL-terminated UTF-8; `out` valid; release with
 * `latmax_table_free`.
 */
int latmax_table_load(const char *path, struct LatmaxTable **out);

/**
 * Queries the lookup table: p-value 1 - F(u; rho). `censored` (may be null)
 * receives 1 when `u` fell outside the tabulated grid.
 *
 * # Safety
 * `table` must be a live handle; `out` must be valid.
 */
int latmax_table_query(const struct LatmaxTable *table,
                       double rho,
                       double u,
                       double *out,
                       int *censored);

/**
 * Releases a lookup-table handle. Null is a no-op.
 *
 * # Safety
 * `table` must be a handle from this library, not yet freed.
 */
void latmax_table_free(struct LatmaxTable *table);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATMAX_H */
