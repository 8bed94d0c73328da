#ifndef PATHLOSS_LAB_H
#define PATHLOSS_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by all functions.
typedef enum PlStatus {
  PL_STATUS_OK = 0,
  PL_STATUS_NULL_POINTER = 1,
  PL_STATUS_INVALID_ARGUMENT = 2,
  PL_STATUS_IO = 3,
  // A file exists but is not in the expected format (bad magic, truncated).
  PL_STATUS_BAD_FORMAT = 4,
  PL_STATUS_CHECKPOINT_MISMATCH = 5,
  PL_STATUS_PANIC = 6,
} PlStatus;

// A trained checkpoint with its preprocessing state.
typedef struct PlPredictor PlPredictor;

// Loaded satellite and elevation rasters.
typedef struct PlScene PlScene;

// One Tx/Rx link. Altitudes are absolute (terrain plus antenna).
typedef struct PlLink {
  double tx_x;
  double tx_y;
  double tx_alt;
  double rx_x;
  double rx_y;
  double rx_alt;
  double frequency_hz;
} PlLink;

// Predicted path loss. `ple_hat` and `comp_hat` are NaN when the model
// variant does not produce them.
typedef struct PlOutput {
  double pl_hat;
  double ple_hat;
  double comp_hat;
} PlOutput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *pl_last_error(void);

// Library version as a static NUL-terminated string.
const char *pl_version(void);

// Free-space path loss in dB.
//
// # Safety
// `out` must be null or point to writable memory for one double.
enum PlStatus pl_fspl(double frequency_hz, double distance_m, double *out);

// CI model prediction at `d3d_m`.
//
// # Safety
// `out` must be null or point to writable memory for one double.
enum PlStatus pl_ci_predict(double frequency_hz,
                            double d0_m,
                            double ple,
                            double d3d_m,
                            double *out);

// Least-squares path loss exponent of `n` (distance, path loss) pairs.
//
// # Safety
// `distance_m` and `path_loss_db` must each point to `n` doubles, and
// `out_ple` to writable memory for one double.
enum PlStatus pl_fit_ple(const double *distance_m,
                         const double *path_loss_db,
                         size_t n,
                         double frequency_hz,
                         double d0_m,
                         double *out_ple);

// Loads `satellite.plrg` and `elevation.plrg` from `dir`.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` writable.
enum PlStatus pl_scene_load(const char *dir, struct PlScene **out);

// # Safety
// `scene` must be null or a handle from [`pl_scene_load`] not yet freed.
void pl_scene_free(struct PlScene *scene);

// Loads a checkpoint directory written by the `train` command.
//
// # Safety
// `checkpoint_dir` must be a NUL-terminated string and `out` writable.
enum PlStatus pl_predictor_load(const char *checkpoint_dir, struct PlPredictor **out);

// A predictor that only evaluates the CI model.
//
// # Safety
// `out` must be writable.
enum PlStatus pl_predictor_ci(double frequency_hz,
                              double d0_m,
                              double ple,
                              struct PlPredictor **out);

// # Safety
// `predictor` must be null or a live handle.
void pl_predictor_free(struct PlPredictor *predictor);

// Predicts `n` links. `out` receives `n` results in input order.
//
// # Safety
// Handles must be live; `links` and `out` must each hold `n` elements.
enum PlStatus pl_predictor_predict(const struct PlPredictor *predictor,
                                   const struct PlScene *scene,
                                   const struct PlLink *links,
                                   size_t n,
                                   struct PlOutput *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATHLOSS_LAB_H */
