/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PGMFUSE_H
#define PGMFUSE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum PgmStatus {
  PGM_STATUS_OK = 0,
  PGM_STATUS_NULL_POINTER = 1,
  PGM_STATUS_INVALID_ARGUMENT = 2,
  PGM_STATUS_IO = 3,
  PGM_STATUS_FORMAT = 4,
  PGM_STATUS_VALIDATION = 5,
  PGM_STATUS_DOMAIN = 6,
  PGM_STATUS_CONFIG = 7,
  PGM_STATUS_INTEGRITY = 8,
  PGM_STATUS_BUFFER_TOO_SMALL = 9,
  PGM_STATUS_PANIC = 10,
} PgmStatus;

/**
 * Network variants, numbered as in [`pgm_model_arch`].
 */
typedef enum PgmArch {
  PGM_ARCH_BASELINE = 0,
  PGM_ARCH_EARLY_FUSION = 1,
  PGM_ARCH_MID_FUSION = 2,
} PgmArch;

typedef struct PgmCalib PgmCalib;

typedef struct PgmCloud PgmCloud;

typedef struct PgmConfusion PgmConfusion;

typedef struct PgmImage PgmImage;

typedef struct PgmLabels PgmLabels;

typedef struct PgmModel PgmModel;

typedef struct PgmTensor PgmTensor;

/**
 * Polar grid geometry; angles in radians.
 */
typedef struct PgmGridSpec {
  size_t rows;
  size_t cols;
  double azimuth_min;
  double azimuth_max;
  double elevation_min;
  double elevation_max;
} PgmGridSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pgm_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 *
 * The pointer stays valid until the next call into the library on the same thread.
 */
const char *pgm_last_error_message(void);

/**
 * Default 64 x 512 grid.
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one `PgmGridSpec`.
 */
enum PgmStatus pgm_grid_default(struct PgmGridSpec *out);

/**
 * # Safety
 * `path` must be NULL or a NUL-terminated string; `out` NULL or writable.
 */
enum PgmStatus pgm_cloud_read(const char *path, struct PgmCloud **out);

/**
 * Cloud from `count` interleaved (x, y, z, intensity) floats.
 *
 * # Safety
 * `xyzi` must point to `4 * count` readable floats.
 */
enum PgmStatus pgm_cloud_from_xyzi(const float *xyzi, size_t count, struct PgmCloud **out);

/**
 * # Safety
 * `cloud` must be a live handle or NULL; `out` writable or NULL.
 */
enum PgmStatus pgm_cloud_len(const struct PgmCloud *cloud, size_t *out);

/**
 * # Safety
 * `cloud` must be NULL or a handle not yet freed.
 */
void pgm_cloud_free(struct PgmCloud *cloud);

/**
 * # Safety
 * `path` must be NULL or NUL-terminated; `out` writable or NULL.
 */
enum PgmStatus pgm_calib_read(const char *path, struct PgmCalib **out);

/**
 * # Safety
 * `calib` must be NULL or a handle not yet freed.
 */
void pgm_calib_free(struct PgmCalib *calib);

/**
 * # Safety
 * `path` must be NULL or NUL-terminated; `out` writable or NULL.
 */
enum PgmStatus pgm_image_read(const char *path, struct PgmImage **out);

/**
 * # Safety
 * `image` must be NULL or a handle not yet freed.
 */
void pgm_image_free(struct PgmImage *image);

/**
 * Project a cloud onto the grid (XYZDI channels).
 *
 * # Safety
 * Pointers must be NULL or valid; `grid` NULL selects the default grid.
 */
enum PgmStatus pgm_tensor_build(const struct PgmCloud *cloud,
                                const struct PgmGridSpec *grid,
                                struct PgmTensor **out);

/**
 * New XYZDIRGB tensor with camera colors attached.
 *
 * # Safety
 * All handles must be live; `out` writable or NULL.
 */
enum PgmStatus pgm_tensor_fuse_rgb(const struct PgmTensor *tensor,
                                   const struct PgmImage *image,
                                   const struct PgmCalib *calib,
                                   struct PgmTensor **out);

/**
 * # Safety
 * `path` must be NULL or NUL-terminated; `out` writable or NULL.
 */
enum PgmStatus pgm_tensor_read(const char *path, struct PgmTensor **out);

/**
 * # Safety
 * `tensor` must be live; `path` NUL-terminated.
 */
enum PgmStatus pgm_tensor_write(const struct PgmTensor *tensor, const char *path);

/**
 * Rows, columns and channels (5 or 8).
 *
 * # Safety
 * `tensor` must be live; outputs writable or NULL.
 */
enum PgmStatus pgm_tensor_dims(const struct PgmTensor *tensor,
                               size_t *rows,
                               size_t *cols,
                               size_t *channels);

/**
 * Number of occupied cells.
 *
 * # Safety
 * `tensor` must be live; `out` writable or NULL.
 */
enum PgmStatus pgm_tensor_occupied(const struct PgmTensor *tensor, size_t *out);

/**
 * Copy the row-major HWC values into `buf` of `len` floats.
 *
 * # Safety
 * `buf` must point to `len` writable floats.
 */
enum PgmStatus pgm_tensor_copy_data(const struct PgmTensor *tensor, float *buf, size_t len);

/**
 * Copy the occupancy mask (1 occupied, 0 empty) into `buf` of `len` bytes.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum PgmStatus pgm_tensor_copy_mask(const struct PgmTensor *tensor, uint8_t *buf, size_t len);

/**
 * # Safety
 * `tensor` must be NULL or a handle not yet freed.
 */
void pgm_tensor_free(struct PgmTensor *tensor);

/**
 * Ground-truth grid from a KITTI object label file.
 *
 * # Safety
 * Handles must be live, `label_path` NUL-terminated, `out` writable or NULL.
 */
enum PgmStatus pgm_labels_rasterize(const struct PgmTensor *tensor,
                                    const char *label_path,
                                    const struct PgmCalib *calib,
                                    struct PgmLabels **out);

/**
 * # Safety
 * `path` must be NULL or NUL-terminated; `out` writable or NULL.
 */
enum PgmStatus pgm_labels_read(const char *path, struct PgmLabels **out);

/**
 * # Safety
 * `labels` must be live; `path` NUL-terminated.
 */
enum PgmStatus pgm_labels_write(const struct PgmLabels *labels, const char *path);

/**
 * Copy class ids (0 Background, 1 Car, 2 Pedestrian, 3 Cyclist) row-major into `buf`.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum PgmStatus pgm_labels_copy(const struct PgmLabels *labels, uint8_t *buf, size_t len);

/**
 * # Safety
 * `labels` must be live; `out` writable or NULL.
 */
enum PgmStatus pgm_labels_count(const struct PgmLabels *labels, uint8_t class_id, size_t *out);

/**
 * # Safety
 * `labels` must be NULL or a handle not yet freed.
 */
void pgm_labels_free(struct PgmLabels *labels);

/**
 * # Safety
 * `path` must be NULL or NUL-terminated; `out` writable or NULL.
 */
enum PgmStatus pgm_model_load(const char *path, struct PgmModel **out);

/**
 * # Safety
 * `model` must be live; `out` writable or NULL.
 */
enum PgmStatus pgm_model_arch(const struct PgmModel *model, enum PgmArch *out);

/**
 * Per-cell argmax labels; empty cells are Background.
 *
 * # Safety
 * Handles must be live; `out` writable or NULL.
 */
enum PgmStatus pgm_model_predict(const struct PgmModel *model,
                                 const struct PgmTensor *tensor,
                                 struct PgmLabels **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void pgm_model_free(struct PgmModel *model);

/**
 * Empty 4-class confusion matrix.
 *
 * # Safety
 * `out` must be writable or NULL.
 */
enum PgmStatus pgm_confusion_new(struct PgmConfusion **out);

/**
 * Add one frame; `mask_tensor` selects occupied cells, NULL evaluates every cell.
 *
 * # Safety
 * `cm`, `pred` and `gt` must be live; `mask_tensor` live or NULL.
 */
enum PgmStatus pgm_confusion_accumulate(struct PgmConfusion *cm,
                                        const struct PgmLabels *pred,
                                        const struct PgmLabels *gt,
                                        const struct PgmTensor *mask_tensor);

/**
 * IoU of one class; `defined` is 0 when the class never occurs in either labeling.
 *
 * # Safety
 * `cm` must be live; outputs writable or NULL.
 */
enum PgmStatus pgm_confusion_iou(const struct PgmConfusion *cm,
                                 uint8_t class_id,
                                 double *iou,
                                 bool *defined);

/**
 * Mean IoU over Car, Pedestrian and Cyclist, skipping undefined classes.
 *
 * # Safety
 * `cm` must be live; `out` writable or NULL.
 */
enum PgmStatus pgm_confusion_miou(const struct PgmConfusion *cm, double *out);

/**
 * # Safety
 * `cm` must be NULL or a handle not yet freed.
 */
void pgm_confusion_free(struct PgmConfusion *cm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PGMFUSE_H */
