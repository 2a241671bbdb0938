#ifndef AFFGROUP_H
#define AFFGROUP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AffgroupStatus {
  AFFGROUP_STATUS_OK = 0,
  AFFGROUP_STATUS_NULL_POINTER = 1,
  AFFGROUP_STATUS_INVALID_ARGUMENT = 2,
  AFFGROUP_STATUS_SINGULAR = 3,
  AFFGROUP_STATUS_SHAPE_MISMATCH = 4,
  AFFGROUP_STATUS_CHART_MISMATCH = 5,
  AFFGROUP_STATUS_IO = 6,
  AFFGROUP_STATUS_PARSE = 7,
  AFFGROUP_STATUS_CONFIG = 8,
  AFFGROUP_STATUS_BUFFER_TOO_SMALL = 9,
  AFFGROUP_STATUS_PANIC = 10,
  AFFGROUP_STATUS_OTHER = 11,
} AffgroupStatus;

typedef struct AffgroupChart AffgroupChart;

typedef struct AffgroupGrid AffgroupGrid;

typedef struct AffgroupLifted AffgroupLifted;

typedef struct AffgroupPipeline AffgroupPipeline;

/*
 Integrand over `GL2`: receives the row-major matrix entries and `user`.
 */
typedef double (*AffgroupMatrixFn)(const double *a, void *user);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the next
 failing call on the same thread.
 */
const char *affgroup_last_error(void);

/*
 Frees a string returned by this library.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void affgroup_string_free(char *s);

/*
 Row-major `a = [a11, a12, a21, a22]` to `[rho, theta, u, w]` and the sign of `v`
 (`1` or `-1`).

 # Safety
 `a` must point to 4 doubles, `coords` to 4 writable doubles, `sign` to an int.
 */
enum AffgroupStatus affgroup_iwasawa(const double *a, double *coords, int32_t *sign);

/*
 Inverse of [`affgroup_iwasawa`].

 # Safety
 `coords` must point to 4 doubles and `a` to 4 writable doubles.
 */
enum AffgroupStatus affgroup_from_chart(const double *coords, int32_t sign, double *a);

/*
 Grid of `height x width` row-major `values` with the given origin (position of
 node `(0, 0)`) and spacing.

 # Safety
 `values` must point to `len` doubles; `out` must be writable.
 */
enum AffgroupStatus affgroup_grid_new(size_t height,
                                      size_t width,
                                      double origin_x,
                                      double origin_y,
                                      double spacing,
                                      const double *values,
                                      size_t len,
                                      struct AffgroupGrid **out);

/*
 Reads a PGM or CSV grid.

 # Safety
 `file` must be a nul-terminated path; `out` must be writable.
 */
enum AffgroupStatus affgroup_grid_read(const char *file, struct AffgroupGrid **out);

/*
 Writes a grid; the format follows the extension as in the command-line tool.

 # Safety
 `grid` must be a live handle and `file` a nul-terminated path.
 */
enum AffgroupStatus affgroup_grid_write(const struct AffgroupGrid *grid, const char *file);

/*
 # Safety
 `grid` must be a live handle; `height` and `width` must be writable.
 */
enum AffgroupStatus affgroup_grid_shape(const struct AffgroupGrid *grid,
                                        size_t *height,
                                        size_t *width);

/*
 Copies the row-major samples into `out`, which must hold `height * width` values.

 # Safety
 `grid` must be a live handle and `out` must point to `len` writable doubles.
 */
enum AffgroupStatus affgroup_grid_values(const struct AffgroupGrid *grid, double *out, size_t len);

/*
 # Safety
 `grid` must come from this library and not be freed twice.
 */
void affgroup_grid_free(struct AffgroupGrid *grid);

/*
 Chart with axis bounds `lo[k]..hi[k]` and `counts[k]` nodes for
 `rho, theta, u, w`, both signs of `v`.

 # Safety
 `lo`, `hi` and `counts` must point to 4 values each; `out` must be writable.
 */
enum AffgroupStatus affgroup_chart_new(const double *lo,
                                       const double *hi,
                                       const size_t *counts,
                                       struct AffgroupChart **out);

/*
 The default chart, overridden by the `axis.lo/hi/count` lines of `config`
 (which may be null).

 # Safety
 `config` must be null or nul-terminated; `out` must be writable.
 */
enum AffgroupStatus affgroup_chart_from_config(const char *config, struct AffgroupChart **out);

/*
 Number of nodes over both sign branches.

 # Safety
 `chart` must be a live handle.
 */
size_t affgroup_chart_len(const struct AffgroupChart *chart);

/*
 # Safety
 `chart` must come from this library and not be freed twice.
 */
void affgroup_chart_free(struct AffgroupChart *chart);

/*
 Haar integral over `GL2` through the chart. `f` is called from worker threads
 and must be thread-safe.

 # Safety
 `chart` must be a live handle, `f` non-null, `out` writable.
 */
enum AffgroupStatus affgroup_integrate_gl2(const struct AffgroupChart *chart,
                                           AffgroupMatrixFn f,
                                           void *user,
                                           double *out);

/*
 Pipeline built from key=value `config` text (null for the defaults).

 # Safety
 `config` must be null or nul-terminated; `out` must be writable.
 */
enum AffgroupStatus affgroup_pipeline_new(const char *config, struct AffgroupPipeline **out);

/*
 # Safety
 `pipeline` must come from this library and not be freed twice.
 */
void affgroup_pipeline_free(struct AffgroupPipeline *pipeline);

/*
 Lifts `grid` with the pipeline's kernel onto its spatial grid and chart.

 # Safety
 Handles must be live; `out` must be writable.
 */
enum AffgroupStatus affgroup_lift(const struct AffgroupPipeline *pipeline,
                                  const struct AffgroupGrid *grid,
                                  struct AffgroupLifted **out);

/*
 Values stored, `chart nodes * spatial nodes`.

 # Safety
 `lifted` must be a live handle.
 */
size_t affgroup_lifted_len(const struct AffgroupLifted *lifted);

/*
 Copies the values, chart node major and spatial node minor.

 # Safety
 `lifted` must be a live handle and `out` must point to `len` writable doubles.
 */
enum AffgroupStatus affgroup_lifted_values(const struct AffgroupLifted *lifted,
                                           double *out,
                                           size_t len);

/*
 # Safety
 `lifted` must be a live handle and `file` a nul-terminated path.
 */
enum AffgroupStatus affgroup_lifted_save(const struct AffgroupLifted *lifted, const char *file);

/*
 # Safety
 `file` must be a nul-terminated path; `out` must be writable.
 */
enum AffgroupStatus affgroup_lifted_load(const char *file, struct AffgroupLifted **out);

/*
 # Safety
 `lifted` must come from this library and not be freed twice.
 */
void affgroup_lifted_free(struct AffgroupLifted *lifted);

/*
 Invariance report of `f1` and `f2` as a JSON string (free with
 [`affgroup_string_free`]) and its largest functional gap. With `given` non-null
 (`x1, x2, a11, a12, a21, a22`) that element replaces the alignment search.

 # Safety
 Handles must be live; `given` null or 6 doubles; `gap` and `json` writable.
 */
enum AffgroupStatus affgroup_invariance_report(const struct AffgroupPipeline *pipeline,
                                               const struct AffgroupGrid *f1,
                                               const struct AffgroupGrid *f2,
                                               const double *given,
                                               double *gap,
                                               char **json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFFGROUP_H */
