#ifndef PHOTONFORGE_H
#define PHOTONFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_UTF8 = 2,
  PF_STATUS_INVALID_ARGUMENT = 3,
  PF_STATUS_IO = 4,
  PF_STATUS_FORMAT = 5,
  PF_STATUS_SIMULATION = 6,
  PF_STATUS_CORRELATION = 7,
  PF_STATUS_FIT = 8,
  PF_STATUS_TOMOGRAPHY = 9,
  PF_STATUS_PIPELINE = 10,
  PF_STATUS_PANIC = 99,
} PfStatus;

/**
 * Correlation histogram handle.
 */
typedef struct PfHistogram PfHistogram;

/**
 * Time-tag stream handle.
 */
typedef struct PfStream PfStream;

typedef struct PfG2Fit {
  double g2_zero;
  double g2_zero_err;
  double beta1;
  double beta2;
  double tau1_ps;
  double tau1_err_ps;
  double tau2_ps;
  double chi2_reduced;
  bool converged;
} PfG2Fit;

typedef struct PfPolarization {
  double lambda_plus;
  double lambda_minus;
  double degree_of_polarization;
  /**
   * Bloch vector of the dominant eigenstate; zeros when fully mixed.
   */
  double dominant_stokes[3];
  uint32_t iterations;
} PfPolarization;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *pf_version(void);

/**
 * Message of the last failure on this thread; empty when there was none.
 * Valid until the next failing call on the same thread.
 */
const char *pf_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void pf_string_free(char *s);

/**
 * Reads a PTAG file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PfStatus pf_stream_read(const char *path, struct PfStream **out);

/**
 * # Safety
 * `stream` must be a live handle and `path` a NUL-terminated string.
 */
enum PfStatus pf_stream_write(const struct PfStream *stream, const char *path);

/**
 * Builds a stream from `len` sorted timestamps (in ticks) and channels.
 *
 * # Safety
 * `timestamps` and `channels` must each point to `len` elements.
 */
enum PfStatus pf_stream_from_arrays(uint64_t resolution_ps,
                                    uint16_t channel_count,
                                    const uint64_t *timestamps,
                                    const uint16_t *channels,
                                    size_t len,
                                    struct PfStream **out);

/**
 * Simulates a scene given as JSON (the CLI's scene format).
 *
 * # Safety
 * `scene_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PfStatus pf_simulate(const char *scene_json, struct PfStream **out);

/**
 * Number of records; 0 for a null handle.
 *
 * # Safety
 * `stream` must be null or a live handle.
 */
size_t pf_stream_len(const struct PfStream *stream);

/**
 * # Safety
 * `stream` must be null or a handle not yet freed.
 */
void pf_stream_free(struct PfStream *stream);

/**
 * Cross-correlates `channel_a` against `channel_b` with `bin_ps` bins over
 * `+-window_ns`.
 *
 * # Safety
 * `stream` must be a live handle and `out` a valid pointer.
 */
enum PfStatus pf_correlate(const struct PfStream *stream,
                           uint64_t bin_ps,
                           double window_ns,
                           uint16_t channel_a,
                           uint16_t channel_b,
                           struct PfHistogram **out);

/**
 * Number of bins; 0 for a null handle.
 *
 * # Safety
 * `hist` must be null or a live handle.
 */
size_t pf_histogram_len(const struct PfHistogram *hist);

/**
 * Copies bin centers (ps), g2 and its errors into caller arrays of `len`
 * elements; `len` must equal `pf_histogram_len`. Any array may be null.
 *
 * # Safety
 * Non-null arrays must hold `len` elements.
 */
enum PfStatus pf_histogram_copy(const struct PfHistogram *hist,
                                double *tau_ps,
                                double *g2,
                                double *g2_err,
                                size_t len);

/**
 * # Safety
 * `hist` must be null or a handle not yet freed.
 */
void pf_histogram_free(struct PfHistogram *hist);

/**
 * # Safety
 * `hist` must be a live handle and `out` a valid pointer.
 */
enum PfStatus pf_fit_g2(const struct PfHistogram *hist, struct PfG2Fit *out);

/**
 * MLE polarization state from counts and integration times in the order
 * H, V, D, A, R, L.
 *
 * # Safety
 * `counts` and `seconds` must each point to 6 elements.
 */
enum PfStatus pf_tomography(const double *counts,
                            const double *seconds,
                            struct PfPolarization *out);

/**
 * Runs a built-in scenario and returns its outcome and comparison as a
 * JSON string. A negative `seed` keeps the scenario's own seed.
 *
 * # Safety
 * `id` must be a NUL-terminated string and `out_json` a valid pointer.
 */
enum PfStatus pf_reproduce(const char *id, int64_t seed, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHOTONFORGE_H */
