#ifndef FEDUA_H
#define FEDUA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every function.
 */
typedef enum FeduaStatus {
  FEDUA_STATUS_OK = 0,
  FEDUA_STATUS_INVALID_ARGUMENT = 1,
  FEDUA_STATUS_NULL_POINTER = 2,
  FEDUA_STATUS_DIMENSION = 3,
  FEDUA_STATUS_CALIBRATION = 4,
  FEDUA_STATUS_FORMAT = 5,
  FEDUA_STATUS_IO = 6,
  FEDUA_STATUS_RUNTIME = 7,
  FEDUA_STATUS_PANIC = 8,
} FeduaStatus;

/**
 * A set of per-user binary codewords.
 */
typedef struct FeduaCodebook FeduaCodebook;

/**
 * A trained network loaded from a checkpoint.
 */
typedef struct FeduaModel FeduaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len - 1` bytes) and returns the full message
 * length in bytes excluding the terminator. `buf` may be null to query the
 * length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t fedua_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fedua_version(void);

/**
 * Lower bound on the probability that `n` random `n_e`-bit codewords are
 * pairwise at Hamming distance at least `tau`.
 *
 * # Safety
 * `out_probability` must be a valid writable pointer.
 */
enum FeduaStatus fedua_min_distance_bound(size_t n,
                                          size_t n_e,
                                          size_t tau,
                                          double *out_probability);

/**
 * Smallest codeword length whose bound reaches `q`.
 *
 * # Safety
 * `out_n_e` must be a valid writable pointer.
 */
enum FeduaStatus fedua_choose_embedding_length(size_t n, size_t tau, double q, size_t *out_n_e);

/**
 * Draws one `n_e`-bit codeword for each of the `count` user ids.
 *
 * # Safety
 * `user_ids` must point to `count` readable ids; `out_codebook` must be a
 * valid writable pointer.
 */
enum FeduaStatus fedua_codebook_generate(size_t n_e,
                                         uint64_t seed,
                                         const uint32_t *user_ids,
                                         size_t count,
                                         struct FeduaCodebook **out_codebook);

/**
 * Reads a codebook JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_codebook` must be writable.
 */
enum FeduaStatus fedua_codebook_load(const char *path, struct FeduaCodebook **out_codebook);

/**
 * Writes a codebook JSON file.
 *
 * # Safety
 * `codebook` must come from this library; `path` must be NUL-terminated.
 */
enum FeduaStatus fedua_codebook_save(const struct FeduaCodebook *codebook, const char *path);

/**
 * Codeword length and number of users.
 *
 * # Safety
 * `codebook` must come from this library; out pointers must be writable.
 */
enum FeduaStatus fedua_codebook_shape(const struct FeduaCodebook *codebook,
                                      size_t *out_n_e,
                                      size_t *out_users);

/**
 * Minimum pairwise Hamming distance over the codebook.
 *
 * # Safety
 * `codebook` must come from this library; `out_distance` must be writable.
 */
enum FeduaStatus fedua_codebook_min_distance(const struct FeduaCodebook *codebook,
                                             size_t *out_distance);

/**
 * Copies the codeword of `user_id` (one byte per bit, 0 or 1) into `bits`,
 * which must hold exactly `n_e` bytes.
 *
 * # Safety
 * `codebook` must come from this library; `bits` must point to `len`
 * writable bytes.
 */
enum FeduaStatus fedua_codebook_embedding(const struct FeduaCodebook *codebook,
                                          uint32_t user_id,
                                          uint8_t *bits,
                                          size_t len);

/**
 * Releases a codebook. Null is ignored.
 *
 * # Safety
 * `codebook` must be null or come from this library and not be used again.
 */
void fedua_codebook_free(struct FeduaCodebook *codebook);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out_model` must be writable.
 */
enum FeduaStatus fedua_model_load(const char *path, struct FeduaModel **out_model);

/**
 * Input length `L` and embedding length `n_e` of a model.
 *
 * # Safety
 * `model` must come from this library; out pointers must be writable.
 */
enum FeduaStatus fedua_model_shape(const struct FeduaModel *model,
                                   size_t *out_input_length,
                                   size_t *out_embedding_length);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or come from this library and not be used again.
 */
void fedua_model_free(struct FeduaModel *model);

/**
 * Squared distance between the model output for one sample and the
 * codeword of `user_id`.
 *
 * # Safety
 * Handles must come from this library; `sample` must point to `len`
 * doubles; `out_score` must be writable.
 */
enum FeduaStatus fedua_score(const struct FeduaModel *model,
                             const struct FeduaCodebook *codebook,
                             uint32_t user_id,
                             const double *sample,
                             size_t len,
                             double *out_score);

/**
 * Accept (`*out_accept = 1`) iff the score is at most `tau`; the score is
 * written to `out_score` when that pointer is not null.
 *
 * # Safety
 * Handles must come from this library; `sample` must point to `len`
 * doubles; `out_accept` must be writable; `out_score` may be null.
 */
enum FeduaStatus fedua_authenticate(const struct FeduaModel *model,
                                    const struct FeduaCodebook *codebook,
                                    uint32_t user_id,
                                    double tau,
                                    const double *sample,
                                    size_t len,
                                    int32_t *out_accept,
                                    double *out_score);

/**
 * Warm-up calibration over `k` samples stored row-major (`k * len`
 * doubles): `tau` becomes the `floor(k * r)`-th smallest score.
 *
 * # Safety
 * Handles must come from this library; `samples` must point to `k * len`
 * doubles; `out_tau` must be writable.
 */
enum FeduaStatus fedua_warm_up_threshold(const struct FeduaModel *model,
                                         const struct FeduaCodebook *codebook,
                                         uint32_t user_id,
                                         const double *samples,
                                         size_t k,
                                         size_t len,
                                         double r,
                                         double *out_tau);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDUA_H */
