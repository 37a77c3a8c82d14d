/* C interface to the lrsiam library: extreme-low-resolution (16x12) video
 * recognition with two-stream networks and multi-siamese embedding learning.
 *
 * Conventions:
 *   - Every fallible call returns lrs_status; LRS_OK is 0.
 *   - On failure, lrs_last_error() returns a message for the calling thread,
 *     valid until that thread's next call into the library.
 *   - Objects are opaque handles released with their *_free function.
 *   - Strings returned through char** are owned by the caller and released
 *     with lrs_string_free().
 *   - Paths are UTF-8, tensors are float32 in row-major order.
 */
#ifndef LRSIAM_H
#define LRSIAM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LRS_API __declspec(dllexport)
#else
#define LRS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lrs_status {
  LRS_OK = 0,
  LRS_ERR_USAGE = 1,   /* invalid argument, configuration or path collision */
  LRS_ERR_DATA = 2,    /* missing, malformed or inconsistent data */
  LRS_ERR_NUMERIC = 3, /* non-finite loss, divergence, failed gradient check */
  /* tensor and checkpoint file errors (all map to exit code 2) */
  LRS_ERR_IO_OPEN = 10,
  LRS_ERR_IO_BAD_MAGIC = 11,
  LRS_ERR_IO_UNSUPPORTED_VERSION = 12,
  LRS_ERR_IO_BAD_DTYPE = 13,
  LRS_ERR_IO_TRUNCATED = 14,
  LRS_ERR_IO_DIM_OVERFLOW = 15,
  LRS_ERR_IO_EMPTY_DIM = 16,
  LRS_ERR_IO_NON_FINITE = 17,
  LRS_ERR_IO_WRITE = 18,
  LRS_ERR_IO_TRAILING_DATA = 19,
  LRS_ERR_INTERNAL = 99
} lrs_status;

LRS_API const char* lrs_version(void);
LRS_API const char* lrs_status_name(lrs_status status);
/* Process exit code for a status: 0 success, 1 usage, 2 data, 3 numeric. */
LRS_API int lrs_status_exit_code(lrs_status status);
LRS_API const char* lrs_last_error(void);

/* Progress messages from long-running calls. Pass NULL to silence. */
typedef void (*lrs_log_fn)(const char* message, void* user);
LRS_API void lrs_set_log_callback(lrs_log_fn fn, void* user);

LRS_API void lrs_string_free(char* s);

/* ---- tensors ---------------------------------------------------------- */

typedef struct lrs_tensor lrs_tensor;

/* Copies `data` (product(dims) floats); data may be NULL for zeros. */
LRS_API lrs_status lrs_tensor_create(const size_t* dims, size_t rank, const float* data,
                                     lrs_tensor** out);
LRS_API void lrs_tensor_free(lrs_tensor* t);
LRS_API size_t lrs_tensor_rank(const lrs_tensor* t);
LRS_API size_t lrs_tensor_dim(const lrs_tensor* t, size_t axis);
LRS_API size_t lrs_tensor_size(const lrs_tensor* t);
LRS_API const float* lrs_tensor_data(const lrs_tensor* t);
LRS_API float* lrs_tensor_mutable_data(lrs_tensor* t);
LRS_API lrs_status lrs_tensor_write(const lrs_tensor* t, const char* path);
LRS_API lrs_status lrs_tensor_read(const char* path, lrs_tensor** out);

/* ---- models ----------------------------------------------------------- */

typedef struct lrs_model lrs_model;

/* New model with random initialisation. config_path may be NULL (defaults). */
LRS_API lrs_status lrs_model_create(const char* config_path, uint64_t seed, lrs_model** out);
/* Loads a checkpoint written by training; its config.json is located in the
 * checkpoint's directory or a parent directory. */
LRS_API lrs_status lrs_model_load(const char* checkpoint, lrs_model** out);
LRS_API lrs_status lrs_model_save(const lrs_model* m, const char* checkpoint);
LRS_API void lrs_model_free(lrs_model* m);
LRS_API size_t lrs_model_embed_dim(const lrs_model* m);
LRS_API size_t lrs_model_num_classes(const lrs_model* m);
/* rgb [T,12,16,3], flow [T,12,16,20] (flow may be NULL for one-stream
 * models). Output: embedding [embed_dim] or class probabilities [C]. */
LRS_API lrs_status lrs_model_embed(const lrs_model* m, const lrs_tensor* rgb, const lrs_tensor* flow,
                                   lrs_tensor** out);
LRS_API lrs_status lrs_model_classify(const lrs_model* m, const lrs_tensor* rgb,
                                      const lrs_tensor* flow, lrs_tensor** out);

/* ---- pipeline stages ------------------------------------------------------ */

/* config_path may be NULL everywhere it is optional (defaults apply). */
LRS_API lrs_status lrs_gen_toy(const char* config_path, const char* out_dir, int force);
LRS_API lrs_status lrs_prepare_lr(const char* config_path, const char* hr_manifest,
                                  const char* out_dir, size_t jobs);
LRS_API lrs_status lrs_flow(const char* config_path, const char* lr_manifest, const char* out_dir,
                            size_t jobs);
/* modes: "baseline", "augment", "multi-siamese", a comma list, or "all";
 * NULL uses the config's train.mode. stream: "one-stream", "two-stream" or
 * NULL (config). summary_json may be NULL. */
LRS_API lrs_status lrs_train(const char* config_path, const char* modes, const char* stream,
                             const char* out_dir, char** summary_json);
LRS_API lrs_status lrs_eval(const char* checkpoint, const char* split, char** metrics_json);
/* split may be NULL (all videos in the manifest). */
LRS_API lrs_status lrs_embed(const char* checkpoint, const char* manifest, const char* out_dir,
                             const char* split, char** ratio_json);
/* Returns LRS_ERR_NUMERIC when any case fails; the report is set either way. */
LRS_API lrs_status lrs_gradcheck(size_t seeds, char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* LRSIAM_H */
