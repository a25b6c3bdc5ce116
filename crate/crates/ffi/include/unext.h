#ifndef UNEXT_H
#define UNEXT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum UnextStatus {
  UNEXT_STATUS_OK = 0,
  UNEXT_STATUS_NULL_POINTER = 1,
  UNEXT_STATUS_INVALID_ARGUMENT = 2,
  UNEXT_STATUS_CONFIG = 3,
  UNEXT_STATUS_SHAPE = 4,
  UNEXT_STATUS_CHECKPOINT = 5,
  UNEXT_STATUS_IO = 6,
  UNEXT_STATUS_PANIC = 7,
  UNEXT_STATUS_OTHER = 8,
} UnextStatus;

/**
 * Opaque model handle.
 */
typedef struct UnextModel UnextModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a freshly initialized model. `config_name` is `unext`, `unext-s`
 * or `unext-l`.
 *
 * # Safety
 * `config_name` must be a NUL-terminated string; `out` must be writable.
 */
enum UnextStatus unext_model_new(const char *config_name, uint64_t seed, struct UnextModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UnextStatus unext_model_load(const char *path, struct UnextModel **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum UnextStatus unext_model_save(const struct UnextModel *model, const char *path);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and must not be used afterwards.
 */
void unext_model_free(struct UnextModel *model);

/**
 * Number of learnable parameters.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum UnextStatus unext_model_param_count(const struct UnextModel *model, uint64_t *out);

/**
 * Multiply-accumulates of one forward pass on a `height`×`width` image.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum UnextStatus unext_model_macs(const struct UnextModel *model,
                                  uint32_t height,
                                  uint32_t width,
                                  uint64_t *out);

/**
 * Input channels and output channels of the model.
 *
 * # Safety
 * `model` must come from this library; both outputs must be writable.
 */
enum UnextStatus unext_model_channels(const struct UnextModel *model,
                                      uint32_t *in_channels,
                                      uint32_t *out_channels);

/**
 * Eval-mode forward of one planar `[in_channels, height, width]` image with
 * values in `[0,1]`. Writes `[out_channels, height, width]` logits.
 *
 * # Safety
 * `image` must hold `in_channels·height·width` floats and `logits` must have
 * room for `logits_len` floats.
 */
enum UnextStatus unext_model_infer(const struct UnextModel *model,
                                   const float *image,
                                   uint32_t height,
                                   uint32_t width,
                                   float *logits,
                                   size_t logits_len);

/**
 * Description of the last failure on this thread, or NULL after a success.
 * The string stays valid until the next call into this library on the
 * same thread.
 */
const char *unext_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNEXT_H */
