#ifndef AGEPOP_H
#define AGEPOP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C interface.
 */
typedef enum AgepopStatus {
  AGEPOP_STATUS_OK = 0,
  AGEPOP_STATUS_NULL_POINTER = 1,
  AGEPOP_STATUS_INVALID_ARGUMENT = 2,
  AGEPOP_STATUS_CONFIG = 3,
  AGEPOP_STATUS_SIMULATION = 4,
  AGEPOP_STATUS_SOLVER = 5,
  AGEPOP_STATUS_ESTIMATION = 6,
  AGEPOP_STATUS_BUFFER_TOO_SMALL = 7,
  AGEPOP_STATUS_PANIC = 8,
} AgepopStatus;

/**
 * A model together with the estimation settings read from its configuration.
 */
typedef struct AgepopModel AgepopModel;

/**
 * Solution of the limit equation.
 */
typedef struct AgepopSolution AgepopSolution;

/**
 * One simulated trajectory with its death process.
 */
typedef struct AgepopTrajectory AgepopTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *agepop_version(void);

/**
 * Message of the last failing call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *agepop_last_error(void);

/**
 * Creates the built-in reference model.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum AgepopStatus agepop_model_reference(struct AgepopModel **out);

/**
 * Creates a model from a run configuration in TOML (the same format as the
 * command-line `--config` files).
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum AgepopStatus agepop_model_from_toml(const char *toml, struct AgepopModel **out);

/**
 * Releases a model. Passing NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void agepop_model_free(struct AgepopModel *model);

/**
 * Observation window of a model.
 *
 * # Safety
 * `model` must be a live handle; the outputs must be writable.
 */
enum AgepopStatus agepop_model_domain(const struct AgepopModel *model,
                                      double *horizon,
                                      double *max_age);

/**
 * Simulates one trajectory at scale `n`, recording snapshots at the
 * `n_times` ascending times in `times` (may be NULL when `n_times` is 0).
 * With the same seed and scale the trajectory equals the one written by
 * `agepop simulate --seed <seed> --scale <n>`.
 *
 * # Safety
 * `model` must be live, `times` must hold `n_times` values, `out` writable.
 */
enum AgepopStatus agepop_simulate(const struct AgepopModel *model,
                                  size_t n,
                                  uint64_t seed,
                                  const double *times,
                                  size_t n_times,
                                  struct AgepopTrajectory **out);

/**
 * Releases a trajectory. Passing NULL is a no-op.
 *
 * # Safety
 * `traj` must be NULL or a handle not yet freed.
 */
void agepop_trajectory_free(struct AgepopTrajectory *traj);

/**
 * Individual and event counts of a trajectory. Any output may be NULL.
 *
 * # Safety
 * `traj` must be live; non-NULL outputs must be writable.
 */
enum AgepopStatus agepop_trajectory_counts(const struct AgepopTrajectory *traj,
                                           size_t *initial,
                                           size_t *births,
                                           size_t *deaths,
                                           size_t *final_count);

/**
 * Copies the ascending ages of the snapshot recorded at `time` (or of the
 * final state when `time` equals the horizon) into `buf`. `*len` receives
 * the number of ages; if it exceeds `cap` nothing is copied and
 * `BUFFER_TOO_SMALL` is returned, so a NULL `buf` with `cap` 0 queries the size.
 *
 * # Safety
 * `traj` must be live, `buf` must hold `cap` values, `len` writable.
 */
enum AgepopStatus agepop_trajectory_ages(const struct AgepopTrajectory *traj,
                                         double time,
                                         double *buf,
                                         size_t cap,
                                         size_t *len);

/**
 * Copies the death times and ages, in time order, into `times` and `ages`
 * under the same size protocol as [`agepop_trajectory_ages`].
 *
 * # Safety
 * `traj` must be live, `times` and `ages` must hold `cap` values each.
 */
enum AgepopStatus agepop_trajectory_deaths(const struct AgepopTrajectory *traj,
                                           double *times,
                                           double *ages,
                                           size_t cap,
                                           size_t *len);

/**
 * Solves the limit equation with time step `dt`; `dt <= 0` selects the
 * default step (horizon / 2000).
 *
 * # Safety
 * `model` must be live; `out` writable.
 */
enum AgepopStatus agepop_solve(const struct AgepopModel *model,
                               double dt,
                               struct AgepopSolution **out);

/**
 * Releases a solution. Passing NULL is a no-op.
 *
 * # Safety
 * `sol` must be NULL or a handle not yet freed.
 */
void agepop_solution_free(struct AgepopSolution *sol);

/**
 * Limit density `g(t, a)`.
 *
 * # Safety
 * `sol` must be live; `out` writable.
 */
enum AgepopStatus agepop_density(const struct AgepopSolution *sol, double t, double a, double *out);

/**
 * Limit death intensity `mu(t, a) g(t, a)`.
 *
 * # Safety
 * `sol` must be live; `out` writable.
 */
enum AgepopStatus agepop_death_intensity(const struct AgepopSolution *sol,
                                         double t,
                                         double a,
                                         double *out);

/**
 * Death rate `mu(t, a)` of the model behind the solution.
 *
 * # Safety
 * `sol` must be live; `out` writable.
 */
enum AgepopStatus agepop_death_rate(const struct AgepopSolution *sol,
                                    double t,
                                    double a,
                                    double *out);

/**
 * Adaptive density estimate at `(t, a)` from the snapshot at `t`, with the
 * selected bandwidth. `bandwidth` may be NULL.
 *
 * # Safety
 * `traj` must be live; `value` writable.
 */
enum AgepopStatus agepop_estimate_density(const struct AgepopTrajectory *traj,
                                          double t,
                                          double a,
                                          double *value,
                                          double *bandwidth);

/**
 * Adaptive death-intensity estimate at `(t, a)` from the death process,
 * with the selected time and age bandwidths. The bandwidth outputs may be NULL.
 *
 * # Safety
 * `traj` must be live; `value` writable.
 */
enum AgepopStatus agepop_estimate_death_intensity(const struct AgepopTrajectory *traj,
                                                  double t,
                                                  double a,
                                                  double *value,
                                                  double *bandwidth_time,
                                                  double *bandwidth_age);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGEPOP_H */
