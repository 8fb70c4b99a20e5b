#ifndef PLANAR_MK_H
#define PLANAR_MK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum PmkStatus {
  PMK_STATUS_OK = 0,
  PMK_STATUS_NULL_POINTER = 1,
  PMK_STATUS_INVALID_INPUT = 2,
  PMK_STATUS_INFEASIBLE = 3,
  PMK_STATUS_SIZE_LIMIT = 4,
  PMK_STATUS_NOT_CONVERGED = 5,
  PMK_STATUS_IO = 6,
  PMK_STATUS_PANIC = 7,
  PMK_STATUS_BUFFER_TOO_SMALL = 8,
} PmkStatus;

// How a solve stopped.
typedef enum PmkTermination {
  PMK_TERMINATION_GRAD_TOL = 0,
  PMK_TERMINATION_L_CHANGE = 1,
  PMK_TERMINATION_MAX_ITERS = 2,
} PmkTermination;

// Opaque 2D density on a rectangular grid.
typedef struct PmkDensity2D PmkDensity2D;

// Opaque result of [`pmk_solve`].
typedef struct PmkSolveReport PmkSolveReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into this library on the same thread.
const char *pmk_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pmk_version(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void pmk_string_free(char *s);

// Density on uniform grids `[x_min, x_max] x [y_min, y_max]` with `nx * ny`
// row-major cell values (x-cell outer). Values are normalised to unit mass.
//
// # Safety
// `values` must point to `nx * ny` doubles; `out` must be writable.
enum PmkStatus pmk_density2d_new(double x_min,
                                 double x_max,
                                 size_t nx,
                                 double y_min,
                                 double y_max,
                                 size_t ny,
                                 const double *values,
                                 struct PmkDensity2D **out_density);

// Density from the JSON density format.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum PmkStatus pmk_density2d_from_json(const char *json, struct PmkDensity2D **out_density);

// Grid shape of a density.
//
// # Safety
// `density` must be a live handle; `nx` and `ny` must be writable.
enum PmkStatus pmk_density2d_shape(const struct PmkDensity2D *density, size_t *nx, size_t *ny);

// # Safety
// `density` must come from this library and not have been freed. NULL is
// ignored.
void pmk_density2d_free(struct PmkDensity2D *density);

// `L(p)` for a coupling given by its `nx * ny` cell densities on the
// x-grid of `f` and the y-grid of `f_tilde`.
//
// # Safety
// Handles must be live; `coupling` must point to `len` doubles.
enum PmkStatus pmk_evaluate_l(const struct PmkDensity2D *f,
                              const struct PmkDensity2D *f_tilde,
                              const double *coupling,
                              size_t len,
                              double *out_value);

// Exact optimal transport cost between the cell-centre atoms of `f` and
// `f_tilde`.
//
// # Safety
// Handles must be live; `out_cost` must be writable.
enum PmkStatus pmk_oracle_full_2d(const struct PmkDensity2D *f,
                                  const struct PmkDensity2D *f_tilde,
                                  double *out_cost);

// Minimises `L`. `config_json` may be NULL for the defaults; otherwise it
// holds a solver configuration object. Reaching the iteration cap is not
// an error; see [`pmk_report_termination`].
//
// # Safety
// Handles must be live; `config_json` must be NULL or NUL-terminated;
// `out_report` must be writable.
enum PmkStatus pmk_solve(const struct PmkDensity2D *f,
                         const struct PmkDensity2D *f_tilde,
                         const char *config_json,
                         struct PmkSolveReport **out_report);

// Objective of the smoothed problem at the returned coupling.
//
// # Safety
// `report` must be live; `out_value` must be writable.
enum PmkStatus pmk_report_l_final(const struct PmkSolveReport *report, double *out_value);

// Exact objective at the returned coupling.
//
// # Safety
// `report` must be live; `out_value` must be writable.
enum PmkStatus pmk_report_l_exact(const struct PmkSolveReport *report, double *out_value);

// Interior L2 norm of the stationarity residual at the returned coupling.
//
// # Safety
// `report` must be live; `out_value` must be writable.
enum PmkStatus pmk_report_el_residual(const struct PmkSolveReport *report, double *out_value);

// # Safety
// `report` must be live; `out_value` must be writable.
enum PmkStatus pmk_report_iterations(const struct PmkSolveReport *report, size_t *out_value);

// # Safety
// `report` must be live; `out_value` must be writable.
enum PmkStatus pmk_report_termination(const struct PmkSolveReport *report,
                                      enum PmkTermination *out_value);

// Copies the optimal coupling's cell densities (row-major, `nx * ny`) into
// `buffer`. `out_len` always receives the required length; a short buffer
// yields `BufferTooSmall` and is left untouched.
//
// # Safety
// `report` must be live; `buffer` must hold `capacity` doubles; `out_len`
// must be writable.
enum PmkStatus pmk_report_p_star(const struct PmkSolveReport *report,
                                 double *buffer,
                                 size_t capacity,
                                 size_t *out_len);

// JSON summary of the solve. Free the result with [`pmk_string_free`].
//
// # Safety
// `report` must be live; `out_json` must be writable.
enum PmkStatus pmk_report_to_json(const struct PmkSolveReport *report, char **out_json);

// # Safety
// `report` must come from [`pmk_solve`] and not have been freed. NULL is
// ignored.
void pmk_report_free(struct PmkSolveReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLANAR_MK_H */
