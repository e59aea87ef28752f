#ifndef GEOALIGN_H
#define GEOALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every exported function.
 */
typedef enum GeoalignStatus {
  GEOALIGN_STATUS_OK = 0,
  GEOALIGN_STATUS_NULL_ARGUMENT = 1,
  GEOALIGN_STATUS_INVALID_ARGUMENT = 2,
  GEOALIGN_STATUS_IO = 3,
  GEOALIGN_STATUS_FORMAT = 4,
  GEOALIGN_STATUS_DIMENSION = 5,
  GEOALIGN_STATUS_POSE_OUTSIDE_MAP = 6,
  GEOALIGN_STATUS_DEGENERATE = 7,
  GEOALIGN_STATUS_CONFIG = 8,
  GEOALIGN_STATUS_INTERNAL = 9,
} GeoalignStatus;

/**
 * Opaque map stack with lazily built terrain meshes.
 */
typedef struct GeoalignMap GeoalignMap;

/**
 * Opaque tracking state.
 */
typedef struct GeoalignTracker GeoalignTracker;

/**
 * Pinhole camera with `(k1, k2, p1, p2, k3)` distortion.
 */
typedef struct GeoalignCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double dist[5];
} GeoalignCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *geoalign_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated
 * and always NUL-terminated when `len > 0`). Returns the full message
 * length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t geoalign_last_error_message(char *buf, size_t len);

/**
 * Loads the map layers listed in a configuration file.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out` must be writable.
 */
enum GeoalignStatus geoalign_map_load(const char *config_path, struct GeoalignMap **out);

/**
 * Builds a synthetic square map with `layers` pseudo-year layers.
 *
 * # Safety
 * `out` must be writable.
 */
enum GeoalignStatus geoalign_map_synthetic(uint32_t layers,
                                           uint32_t size_px,
                                           double augmentation,
                                           uint64_t seed,
                                           struct GeoalignMap **out);

/**
 * Releases a map. Null is ignored.
 *
 * # Safety
 * `map` must be null or a pointer returned by a map constructor that has
 * not been freed yet.
 */
void geoalign_map_free(struct GeoalignMap *map);

/**
 * Number of layers and index of the most recent one.
 *
 * # Safety
 * `map` must be a live map; the out pointers must be writable.
 */
enum GeoalignStatus geoalign_map_info(const struct GeoalignMap *map,
                                      uint32_t *layer_count,
                                      uint32_t *recent_index);

/**
 * Common extent of all layers as `[min_easting, min_northing,
 * max_easting, max_northing]`.
 *
 * # Safety
 * `map` must be a live map; `extent` must hold 4 doubles.
 */
enum GeoalignStatus geoalign_map_extent(const struct GeoalignMap *map, double *extent);

/**
 * Renders layer `layer` at camera-to-world `pose` through the pinhole part
 * of `cam`. Fails with `PoseOutsideMap` when the camera footprint leaves
 * the layer.
 *
 * # Safety
 * `image` must hold `3·width·height` bytes and `depth` `width·height`
 * floats; the other pointers must be valid.
 */
enum GeoalignStatus geoalign_render(const struct GeoalignMap *map,
                                    uint32_t layer,
                                    const struct GeoalignCamera *cam,
                                    const double *pose,
                                    uint8_t *image,
                                    float *depth);

/**
 * Aligns `query` against `reference` with per-pixel reference depth,
 * starting from `init` (query-to-reference). Writes the estimate to
 * `pose` and 1 or 0 to `converged`.
 *
 * # Safety
 * Images must hold `3·width·height` bytes, `ref_depth` `width·height`
 * floats, `init` and `pose` 12 doubles; `converged` must be writable.
 */
enum GeoalignStatus geoalign_align(const struct GeoalignCamera *cam,
                                   const uint8_t *reference,
                                   const float *ref_depth,
                                   const uint8_t *query,
                                   const double *init,
                                   uint32_t max_iterations,
                                   bool huber,
                                   double *pose,
                                   int32_t *converged);

/**
 * Starts tracking on the most recent layer of `map` from the world pose
 * `prior`.
 *
 * # Safety
 * Pointers must be valid; `prior` holds 12 doubles.
 */
enum GeoalignStatus geoalign_tracker_new(const struct GeoalignMap *map,
                                         const struct GeoalignCamera *cam,
                                         const double *prior,
                                         uint32_t max_iterations,
                                         struct GeoalignTracker **out);

/**
 * Tracks one RGB frame. Writes the map-aligned world pose and whether the
 * alignment converged; a non-converged frame returns the unchanged prior.
 *
 * # Safety
 * `tracker` must be live; `image` holds `3·width·height` bytes, `pose`
 * 12 doubles; `converged` must be writable.
 */
enum GeoalignStatus geoalign_tracker_step(struct GeoalignTracker *tracker,
                                          const uint8_t *image,
                                          double *pose,
                                          int32_t *converged);

/**
 * Releases a tracker. Null is ignored.
 *
 * # Safety
 * `tracker` must be null or an unfreed pointer from
 * [`geoalign_tracker_new`].
 */
void geoalign_tracker_free(struct GeoalignTracker *tracker);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOALIGN_H */
