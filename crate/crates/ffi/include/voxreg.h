/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef VOXREG_H
#define VOXREG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  VOXREG_STATUS_OK = 0,
  VOXREG_STATUS_NULL_POINTER = 1,
  VOXREG_STATUS_INVALID_ARGUMENT = 2,
  VOXREG_STATUS_EMPTY_GRID = 3,
  VOXREG_STATUS_NO_CORRESPONDENCES = 4,
  VOXREG_STATUS_SINGULAR_COVARIANCE = 5,
  VOXREG_STATUS_NUMERICAL = 6,
  VOXREG_STATUS_IO = 7,
  VOXREG_STATUS_PARSE = 8,
  VOXREG_STATUS_PANIC = 9,
  VOXREG_STATUS_OTHER = 10,
} VoxregStatus;

typedef enum {
  VOXREG_COST_ICP = 0,
  VOXREG_COST_NDT = 1,
  VOXREG_COST_GICP = 2,
  VOXREG_COST_LITAMIN = 3,
  VOXREG_COST_LITAMIN2_ICP = 4,
  VOXREG_COST_LITAMIN2_ICP_COV = 5,
} VoxregCost;

/**
 * Voxel grid of per-cell Gaussians.
 */
typedef struct VoxregGrid VoxregGrid;

/**
 * Incremental odometry with its own map.
 */
typedef struct VoxregOdometry VoxregOdometry;

/**
 * Pipeline parameters. Obtain defaults from [`voxreg_config_default`].
 */
typedef struct {
  double voxel_size;
  uint32_t min_points;
  VoxregCost cost;
  double lambda;
  double sigma_icp;
  double sigma_cov;
  /**
   * Non-positive means twice the voxel size.
   */
  double max_correspondence_distance;
  uint32_t max_iterations;
  uint32_t max_rounds;
  /**
   * Non-zero selects the constant-velocity motion model.
   */
  uint8_t constant_velocity;
} VoxregConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated library version.
 */
const char *voxreg_version(void);

/**
 * Static description of a status code.
 */
const char *voxreg_status_string(VoxregStatus status);

/**
 * Copies the last error message of this thread into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length.
 */
size_t voxreg_last_error_message(char *buf, size_t len);

VoxregStatus voxreg_config_default(VoxregConfig *out);

/**
 * Voxelizes `n_points` points read from `xyz` as `f32` triples spaced
 * `stride` floats apart (3 for packed xyz, 4 for Velodyne records).
 */
VoxregStatus voxreg_grid_new(const float *xyz,
                             size_t n_points,
                             size_t stride,
                             double voxel_size,
                             uint32_t min_points,
                             VoxregGrid **out);

void voxreg_grid_free(VoxregGrid *grid);

VoxregStatus voxreg_grid_len(const VoxregGrid *grid, size_t *out);

/**
 * Mean, covariance and point count of the `index`-th voxel (cells are
 * ordered by lattice index).
 */
VoxregStatus voxreg_grid_get(const VoxregGrid *grid,
                             size_t index,
                             double *mean,
                             double *cov,
                             uint64_t *count);

/**
 * Aligns `source` to `target` starting from `initial`; writes the pose
 * taking source coordinates into the target frame.
 */
VoxregStatus voxreg_register(const VoxregGrid *source,
                             const VoxregGrid *target,
                             const VoxregConfig *config,
                             const double *initial,
                             double *out_pose);

VoxregStatus voxreg_odometry_new(const VoxregConfig *config, VoxregOdometry **out);

void voxreg_odometry_free(VoxregOdometry *odom);

/**
 * Registers one scan (points as in [`voxreg_grid_new`]), fuses it into the
 * map and writes its world pose. A scan that cannot be registered keeps the
 * motion-model prediction and is not fused.
 */
VoxregStatus voxreg_odometry_process(VoxregOdometry *odom,
                                     const float *xyz,
                                     size_t n_points,
                                     size_t stride,
                                     double *out_pose);

/**
 * Number of finalized map voxels.
 */
VoxregStatus voxreg_odometry_map_len(const VoxregOdometry *odom, size_t *out);

/**
 * Frames processed so far.
 */
VoxregStatus voxreg_odometry_frames(const VoxregOdometry *odom, size_t *out);

/**
 * Symmetric KL divergence between two Gaussians.
 */
VoxregStatus voxreg_sym_kl(const double *mu_p,
                           const double *cov_p,
                           const double *mu_q,
                           const double *cov_q,
                           double lambda,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOXREG_H */
