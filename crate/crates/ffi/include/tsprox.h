#ifndef TSPROX_H
#define TSPROX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum TsproxStatus {
  TSPROX_STATUS_OK = 0,
  TSPROX_STATUS_NULL_POINTER = 1,
  TSPROX_STATUS_INVALID_ARGUMENT = 2,
  TSPROX_STATUS_CONFIG = 3,
  TSPROX_STATUS_CAPPED = 4,
  TSPROX_STATUS_IO = 5,
  TSPROX_STATUS_SCHEMA = 6,
  TSPROX_STATUS_INTERNAL = 7,
} TsproxStatus;

// A regularizer `g`.
typedef struct TsproxRegularizer TsproxRegularizer;

// The outcome of one experiment.
typedef struct TsproxReport TsproxReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library on this thread.
const char *tsprox_last_error_message(void);

// Library version as a static string.
const char *tsprox_version(void);

// # Safety
// `s` must come from this library and not have been freed.
void tsprox_string_free(char *s);

// `g ≡ 0`.
//
// # Safety
// `out` must be valid for writes.
enum TsproxStatus tsprox_regularizer_zero(struct TsproxRegularizer **out);

// `g = μ‖·‖₁`.
//
// # Safety
// `out` must be valid for writes.
enum TsproxStatus tsprox_regularizer_l1(double mu, struct TsproxRegularizer **out);

// Indicator of `[lo, hi]` in `n` dimensions.
//
// # Safety
// `lo` and `hi` must point to `n` doubles; `out` must be valid for writes.
enum TsproxStatus tsprox_regularizer_box(const double *lo,
                                         const double *hi,
                                         size_t n,
                                         struct TsproxRegularizer **out);

// Indicator of a product of simplices with the given consecutive block
// lengths, plus `μ‖·‖₁` (pass `mu = 0` for the plain indicator).
//
// # Safety
// `lens` must point to `blocks` lengths; `out` must be valid for writes.
enum TsproxStatus tsprox_regularizer_simplex(const size_t *lens,
                                             size_t blocks,
                                             double mu,
                                             struct TsproxRegularizer **out);

// Regularizer from its JSON form, e.g. `{"kind":"l1","mu":0.1}`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be valid for writes.
enum TsproxStatus tsprox_regularizer_from_json(const char *json, struct TsproxRegularizer **out);

// # Safety
// `g` must come from a `tsprox_regularizer_*` constructor and not have been freed.
void tsprox_regularizer_free(struct TsproxRegularizer *g);

// `g(x)`; `INFINITY` outside the domain.
//
// # Safety
// `x` must point to `n` doubles; `out` must be valid for writes.
enum TsproxStatus tsprox_regularizer_value(const struct TsproxRegularizer *g,
                                           const double *x,
                                           size_t n,
                                           double *out);

// `out ← prox_{ηg}(x − η d)`.
//
// # Safety
// `x`, `d` and `out` must point to `n` doubles.
enum TsproxStatus tsprox_prox_grad_map(const struct TsproxRegularizer *g,
                                       const double *x,
                                       const double *d,
                                       size_t n,
                                       double eta,
                                       double *out);

// `out ← (x − prox_{ηg}(x − η d)) / η`.
//
// # Safety
// `x`, `d` and `out` must point to `n` doubles.
enum TsproxStatus tsprox_prox_residual(const struct TsproxRegularizer *g,
                                       const double *x,
                                       const double *d,
                                       size_t n,
                                       double eta,
                                       double *out);

// `‖(x − prox_{ηg}(x − η d)) / η‖²`.
//
// # Safety
// `x` and `d` must point to `n` doubles; `out` must be valid for writes.
enum TsproxStatus tsprox_residual_norm_sq(const struct TsproxRegularizer *g,
                                          const double *x,
                                          const double *d,
                                          size_t n,
                                          double eta,
                                          double *out);

// Euclidean projection onto the probability simplex.
//
// # Safety
// `v` and `out` must point to `n` doubles.
enum TsproxStatus tsprox_project_simplex(const double *v, size_t n, double *out);

// `(2/w²)(Tδ² + V)`.
double tsprox_bound_regret_det(size_t horizon, size_t w, double delta, double variation);

// `2(T/w²)(δ² + 7σ²) + (6/w²)V`.
double tsprox_bound_regret_stoch(size_t horizon,
                                 size_t w,
                                 double delta,
                                 double sigma,
                                 double variation);

// `2w²(g(x₁) + 2M) / ((2 − ηL)ηδ²)`.
//
// # Safety
// `out` must be valid for writes.
enum TsproxStatus tsprox_bound_queries_det(size_t w,
                                           double g_x1,
                                           double m,
                                           double eta,
                                           double smoothness,
                                           double delta,
                                           double *out);

// `2w²(g(x₁) + 2M) / ((1 − η(L+1))ηδ² − σ²)`.
//
// # Safety
// `out` must be valid for writes.
enum TsproxStatus tsprox_bound_queries_stoch(size_t w,
                                             double g_x1,
                                             double m,
                                             double eta,
                                             double smoothness,
                                             double delta,
                                             double sigma,
                                             double *out);

// Window and horizon of the offline reduction.
//
// # Safety
// `window` and `horizon` must be valid for writes.
enum TsproxStatus tsprox_offline_params(double epsilon,
                                        double delta,
                                        double sigma,
                                        double c,
                                        size_t *window,
                                        size_t *horizon);

// Runs a built-in experiment without writing artifacts. `jobs = 0` uses
// all cores.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be valid for writes.
enum TsproxStatus tsprox_run_preset(const char *name,
                                    uint64_t seed,
                                    size_t jobs,
                                    struct TsproxReport **out);

// Runs an experiment from TOML or JSON text. Artifacts are written only if
// the configuration names an output directory.
//
// # Safety
// `config` must be a NUL-terminated string; `out` must be valid for writes.
enum TsproxStatus tsprox_run_config(const char *config, size_t jobs, struct TsproxReport **out);

// Whether every asserted check passed; 0 for a null handle.
//
// # Safety
// `r` must be null or a live report handle.
bool tsprox_report_passed(const struct TsproxReport *r);

// Number of summary rows; 0 for a null handle.
//
// # Safety
// `r` must be null or a live report handle.
size_t tsprox_report_rows(const struct TsproxReport *r);

// The report as JSON; release with [`tsprox_string_free`].
//
// # Safety
// `r` must be a live report handle; `out` must be valid for writes.
enum TsproxStatus tsprox_report_json(const struct TsproxReport *r, char **out);

// # Safety
// `r` must come from `tsprox_run_*` and not have been freed.
void tsprox_report_free(struct TsproxReport *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSPROX_H */
