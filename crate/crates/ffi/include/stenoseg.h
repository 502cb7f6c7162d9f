#ifndef STENOSEG_H
#define STENOSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StenoStatus {
  STENO_STATUS_OK = 0,
  STENO_STATUS_NULL_POINTER = 1,
  STENO_STATUS_INVALID_ARGUMENT = 2,
  STENO_STATUS_CONFIG = 3,
  STENO_STATUS_IO = 4,
  STENO_STATUS_FORMAT = 5,
  STENO_STATUS_MISMATCH = 6,
  STENO_STATUS_NON_FINITE = 7,
  STENO_STATUS_PANIC = 8,
} StenoStatus;

/**
 * Opaque model handle.
 */
typedef struct StenoModel StenoModel;

typedef struct StenoConfusion {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t tn;
} StenoConfusion;

/**
 * Undefined ratios (zero denominators) have their `*_defined` flag cleared
 * and the value set to 0.
 */
typedef struct StenoPrf {
  double precision;
  double recall;
  double f1;
  bool precision_defined;
  bool recall_defined;
  bool f1_defined;
} StenoPrf;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *steno_last_error(void);

/**
 * Builds a freshly initialised model from configuration text (the
 * `key = value` format; empty text selects every default).
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` a valid pointer.
 */
enum StenoStatus steno_model_build(const char *config, struct StenoModel **out);

/**
 * Loads a model from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum StenoStatus steno_model_load(const char *path, struct StenoModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void steno_model_free(struct StenoModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum StenoStatus steno_model_param_count(const struct StenoModel *model, uint64_t *out);

/**
 * Side length the model was configured for; inputs must be square at
 * this size.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum StenoStatus steno_model_input_size(const struct StenoModel *model, uintptr_t *out);

/**
 * Predicts a binary mask (0/1 bytes) for a `size x size` row-major image
 * with intensities in `[0, 1]`.
 *
 * # Safety
 * `image` must hold `size * size` floats and `mask_out` as many bytes.
 */
enum StenoStatus steno_model_predict(const struct StenoModel *model,
                                     const float *image,
                                     uintptr_t size,
                                     uint8_t *mask_out);

/**
 * Pixel confusion counts of two binary masks of `len` bytes each.
 *
 * # Safety
 * `pred` and `gt` must hold `len` bytes; `out` must be valid.
 */
enum StenoStatus steno_confusion(const uint8_t *pred,
                                 const uint8_t *gt,
                                 uintptr_t len,
                                 struct StenoConfusion *out);

/**
 * Precision, recall and F1 from confusion counts.
 *
 * # Safety
 * Both pointers must be valid.
 */
enum StenoStatus steno_prf1(const struct StenoConfusion *counts, struct StenoPrf *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STENOSEG_H */
