#ifndef RAOPT_H
#define RAOPT_H

/* Generated by cbindgen from src/lib.rs during `cargo build`; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum RaoptStatus {
  RAOPT_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  RAOPT_STATUS_NULL_POINTER = 1,
  /*
   An argument is out of range or inconsistent (including bad
   coordinates and non-UTF-8 paths).
   */
  RAOPT_STATUS_INVALID_ARGUMENT = 2,
  /*
   Malformed input file.
   */
  RAOPT_STATUS_FORMAT = 3,
  /*
   Bad configuration value.
   */
  RAOPT_STATUS_CONFIG = 4,
  /*
   Unreadable or incompatible checkpoint.
   */
  RAOPT_STATUS_CHECKPOINT = 5,
  RAOPT_STATUS_IO = 6,
  /*
   SDD could not finish within its restart cap.
   */
  RAOPT_STATUS_RESTART_LIMIT = 7,
  /*
   A computation produced NaN or infinity.
   */
  RAOPT_STATUS_NON_FINITE = 8,
  /*
   Internal failure (a caught panic or a shape error).
   */
  RAOPT_STATUS_PANIC = 9,
} RaoptStatus;

/*
 Mechanism selector for [`raopt_protect`].
 */
typedef enum RaoptMechanism {
  RAOPT_MECHANISM_CNOISE = 0,
  RAOPT_MECHANISM_SDD = 1,
} RaoptMechanism;

/*
 Opaque trained model.
 */
typedef struct RaoptModel RaoptModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *raopt_version(void);

/*
 Copies the calling thread's last error message (NUL-terminated,
 truncated to fit) into `buf` and returns the full message length in
 bytes excluding the terminator. Pass `buf = NULL` to query the length.

 # Safety
 `buf` must be null or point to `cap` writable bytes.
 */
size_t raopt_last_error_message(char *buf, size_t cap);

/*
 Great-circle distance in meters.

 # Safety
 `out_m` must be null or writable.
 */
enum RaoptStatus raopt_haversine_m(double lat1,
                                   double lon1,
                                   double lat2,
                                   double lon2,
                                   double *out_m);

/*
 Protects one trajectory. `frame_lat0`/`frame_lon0` are the projection
 origin (normally the dataset's bounding-box midpoint); `seed` fixes the
 noise. `sensitivity_m <= 0` and `max_inner_loops == 0` select the
 defaults. `out_restarts` (optional) receives the SDD restart count.

 # Safety
 Input arrays must hold `len` values (`timestamp` may be null); output
 arrays must hold `len` values.
 */
enum RaoptStatus raopt_protect(enum RaoptMechanism mechanism,
                               double epsilon,
                               double sensitivity_m,
                               size_t max_inner_loops,
                               uint64_t seed,
                               double frame_lat0,
                               double frame_lon0,
                               const double *lat,
                               const double *lon,
                               const int64_t *timestamp,
                               size_t len,
                               double *out_lat,
                               double *out_lon,
                               size_t *out_restarts);

/*
 Mean index-paired haversine distance (meters) of two equal-length
 trajectories.

 # Safety
 Arrays must hold `len` values; `out_m` must be writable.
 */
enum RaoptStatus raopt_mean_euclidean(const double *a_lat,
                                      const double *a_lon,
                                      const double *b_lat,
                                      const double *b_lon,
                                      size_t len,
                                      double *out_m);

/*
 Symmetric Hausdorff distance (meters).

 # Safety
 `a_*` arrays must hold `a_len` values, `b_*` arrays `b_len`; `out_m`
 must be writable.
 */
enum RaoptStatus raopt_hausdorff(const double *a_lat,
                                 const double *a_lon,
                                 size_t a_len,
                                 const double *b_lat,
                                 const double *b_lon,
                                 size_t b_len,
                                 double *out_m);

/*
 Jaccard index of the two trajectories' convex hulls, projected around
 (`frame_lat0`, `frame_lon0`).

 # Safety
 As [`raopt_hausdorff`]; `out_jaccard` must be writable.
 */
enum RaoptStatus raopt_jaccard_hulls(double frame_lat0,
                                     double frame_lon0,
                                     const double *a_lat,
                                     const double *a_lon,
                                     size_t a_len,
                                     const double *b_lat,
                                     const double *b_lon,
                                     size_t b_len,
                                     double *out_jaccard);

/*
 Percentage reduction of `or_m` relative to `op_m`. Returns
 `RAOPT_STATUS_INVALID_ARGUMENT` when `op_m == 0` (undefined).

 # Safety
 `out_pct` must be writable.
 */
enum RaoptStatus raopt_pct_reduction(double op_m, double or_m, double *out_pct);

/*
 Loads a checkpoint written by `raopt train`. On success `*out_model`
 owns a new handle.

 # Safety
 `path` must be a NUL-terminated string; `out_model` must be writable.
 */
enum RaoptStatus raopt_model_load(const char *path, struct RaoptModel **out_model);

/*
 Releases a model handle. Null is ignored.

 # Safety
 `model` must be null or a handle from [`raopt_model_load`] not yet freed.
 */
void raopt_model_free(struct RaoptModel *model);

/*
 Longest trajectory the model accepts, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t raopt_model_max_len(const struct RaoptModel *model);

/*
 Number of trainable parameters, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t raopt_model_param_count(const struct RaoptModel *model);

/*
 Reconstructs one protected trajectory. Timestamps feed the time
 features; pass null to use the Unix epoch for every point.

 # Safety
 `model` must be a live handle; arrays as for [`raopt_protect`].
 */
enum RaoptStatus raopt_model_reconstruct(const struct RaoptModel *model,
                                         const double *lat,
                                         const double *lon,
                                         const int64_t *timestamp,
                                         size_t len,
                                         double *out_lat,
                                         double *out_lon);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAOPT_H */
