#ifndef MITOSCOPE_H
#define MITOSCOPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_IO = 2,
  MS_STATUS_FORMAT = 3,
  MS_STATUS_SHAPE = 4,
  MS_STATUS_INVALID_ARGUMENT = 5,
  MS_STATUS_PANIC = 6,
} MsStatus;

typedef enum MsModelKind {
  MS_MODEL_KIND_UNSUPERVISED = 0,
  MS_MODEL_KIND_SUPERVISED = 1,
} MsModelKind;

/**
 * Opaque model handle.
 */
typedef struct MsModel MsModel;

/**
 * Mirrors the network hyper-parameters.
 */
typedef struct MsNetworkConfig {
  uint32_t frame_size;
  uint32_t hidden;
  uint32_t classes;
  uint32_t encoder_len;
  uint32_t target_len;
  uint32_t grid;
  uint32_t lstm_kernel;
  uint32_t cnn1_kernel;
  uint32_t cnn2_kernel;
} MsNetworkConfig;

/**
 * A point event: frame index and pixel position.
 */
typedef struct MsPoint {
  uint32_t frame;
  uint32_t x;
  uint32_t y;
} MsPoint;

typedef struct MsScores {
  double precision;
  double recall;
  double f1;
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
} MsScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ms_version(void);

/**
 * Message of the last failed call on this thread ("" after a success).
 * The pointer stays valid until the next call on this thread.
 */
const char *ms_last_error(void);

/**
 * Reference hyper-parameters.
 */
struct MsNetworkConfig ms_network_config_default(void);

/**
 * # Safety
 * `config` must point to a valid config and `out` to writable storage for a handle.
 */
enum MsStatus ms_model_init(const struct MsNetworkConfig *config,
                            enum MsModelKind kind,
                            uint64_t seed,
                            struct MsModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable storage for a handle.
 */
enum MsStatus ms_model_load(const char *path, struct MsModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum MsStatus ms_model_save(const struct MsModel *model, const char *path);

/**
 * Release a handle; NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void ms_model_free(struct MsModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum MsStatus ms_model_config(const struct MsModel *model, struct MsNetworkConfig *out);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum MsStatus ms_model_kind(const struct MsModel *model, enum MsModelKind *out);

/**
 * Number of trainable parameters.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum MsStatus ms_model_parameter_count(const struct MsModel *model, uint64_t *out);

/**
 * Event head output of an unsupervised model for `target_len` frames of
 * `frame_size²` values. Per frame and grid block (row-major) writes the
 * winning class to `classes` and its probability to `values`; both hold
 * `target_len × (frame_size / grid)²` entries.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum MsStatus ms_detect_events(const struct MsModel *model,
                               const double *frames,
                               size_t frames_len,
                               uint32_t *classes,
                               double *values,
                               size_t out_len);

/**
 * Response maps of a supervised model: `target_len` frames in, as many
 * `frame_size²` maps out.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum MsStatus ms_predict(const struct MsModel *model,
                         const double *frames,
                         size_t frames_len,
                         double *out,
                         size_t out_len);

/**
 * Reconstruction loss of an unsupervised model on `encoder_len +
 * target_len` frames.
 *
 * # Safety
 * `frames` must hold `frames_len` values and `loss` be writable.
 */
enum MsStatus ms_reconstruction_loss(const struct MsModel *model,
                                     const double *frames,
                                     size_t frames_len,
                                     double *loss);

/**
 * Match detections to annotations within `spatial` pixels and `temporal`
 * frames and report precision, recall and F1.
 *
 * # Safety
 * Arrays must hold the stated number of points; `out` must be writable.
 */
enum MsStatus ms_evaluate(const struct MsPoint *detections,
                          size_t detections_len,
                          const struct MsPoint *annotations,
                          size_t annotations_len,
                          double spatial,
                          uint32_t temporal,
                          struct MsScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MITOSCOPE_H */
