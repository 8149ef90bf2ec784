#ifndef FLEXPOSE_H
#define FLEXPOSE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum FpStatus {
  FP_OK = 0,
  FP_NULL_POINTER = 1,
  FP_INVALID_ARGUMENT = 2,
  FP_CONFIG = 3,
  FP_NUMERICAL = 4,
  FP_IO = 5,
  FP_PARSE = 6,
  FP_CHECKPOINT = 7,
  FP_MISSING_ARTIFACT = 8,
  FP_BUFFER_TOO_SMALL = 9,
  FP_PANIC = 10,
} FpStatus;

/**
 * A trained generator, with its transfer matrix when one was saved.
 */
typedef struct FpGenerator FpGenerator;

/**
 * A set of poses sharing one skeleton.
 */
typedef struct FpPoseSet FpPoseSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fp_version(void);

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `len` bytes. Returns the full message length without the
 * terminator, so a caller can size a buffer with `buf = NULL, len = 0`.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t fp_last_error(char *buf, size_t len);

/**
 * Loads a generator checkpoint. A checkpoint without a transfer matrix
 * samples the source distribution.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FpStatus fp_generator_load(const char *path, struct FpGenerator **out);

/**
 * # Safety
 * `g` must be null or a handle from [`fp_generator_load`], freed once.
 */
void fp_generator_free(struct FpGenerator *g);

/**
 * Joint count of the generator's skeleton, or 0 for a null handle.
 *
 * # Safety
 * `g` must be null or a live handle.
 */
size_t fp_generator_joints(const struct FpGenerator *g);

/**
 * Draws `n` poses through the loaded transfer matrix. `topology_like`
 * supplies the skeleton (any pose set with the generator's joint count).
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum FpStatus fp_generator_sample(const struct FpGenerator *g,
                                  const struct FpPoseSet *topology_like,
                                  size_t n,
                                  uint64_t seed,
                                  struct FpPoseSet **out);

/**
 * Reads a JSON-lines pose file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FpStatus fp_poses_load(const char *path, struct FpPoseSet **out);

/**
 * # Safety
 * `set` must be a live handle; `path` a NUL-terminated string.
 */
enum FpStatus fp_poses_save(const struct FpPoseSet *set, const char *path);

/**
 * # Safety
 * `set` must be null or a handle from this library, freed once.
 */
void fp_poses_free(struct FpPoseSet *set);

/**
 * Number of poses, or 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t fp_poses_len(const struct FpPoseSet *set);

/**
 * Joints per pose, or 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t fp_poses_joints(const struct FpPoseSet *set);

/**
 * Writes pose `index` as `x0, y0, x1, y1, ...` into `buf` (`2M` doubles).
 *
 * # Safety
 * `set` must be live; `buf` must point to `len` writable doubles.
 */
enum FpStatus fp_poses_coords(const struct FpPoseSet *set, size_t index, double *buf, size_t len);

/**
 * Unbiased MMD² on flattened coordinates. `bandwidth ≤ 0` selects the
 * median heuristic; the bandwidth used is written to `used_bandwidth`
 * when that pointer is non-null.
 *
 * # Safety
 * Handles must be live; `out` must be writable; `used_bandwidth` null or
 * writable.
 */
enum FpStatus fp_mmd2(const struct FpPoseSet *a,
                      const struct FpPoseSet *b,
                      double bandwidth,
                      double *out,
                      double *used_bandwidth);

/**
 * Fréchet distance between Gaussian fits of the two sets.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum FpStatus fp_frechet(const struct FpPoseSet *a, const struct FpPoseSet *b, double *out);

/**
 * Rasterizes pose `index` as row-major RGB8 into `buf`
 * (`3 · width · height` bytes).
 *
 * # Safety
 * `set` must be live; `buf` must point to `len` writable bytes.
 */
enum FpStatus fp_rasterize(const struct FpPoseSet *set,
                           size_t index,
                           size_t width,
                           size_t height,
                           uint8_t *buf,
                           size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEXPOSE_H */
