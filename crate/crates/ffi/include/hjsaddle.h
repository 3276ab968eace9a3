#ifndef HJSADDLE_H
#define HJSADDLE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum HjsStatus {
  HJS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  HJS_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  HJS_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad input: parameters, JSON, preconditions, grid shapes.
   */
  HJS_STATUS_VALIDATION = 3,
  /**
   * A computation failed: integration, root finding, spectrum, I/O.
   */
  HJS_STATUS_NUMERICAL = 4,
  /**
   * An index was outside the object, or the node holds no point.
   */
  HJS_STATUS_OUT_OF_RANGE = 5,
  /**
   * The library panicked; the message is kept as the last error.
   */
  HJS_STATUS_PANIC = 6,
} HjsStatus;

/**
 * A Hamiltonian on phase space.
 */
typedef struct HjsHamiltonian HjsHamiltonian;

/**
 * Linearization of a Hamiltonian vector field at a critical point.
 */
typedef struct HjsLinearization HjsLinearization;

/**
 * A sampled jet surface.
 */
typedef struct HjsSurface HjsSurface;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hjs_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length in bytes,
 * excluding the terminator. `buf` may be null when `len` is 0.
 *
 * # Safety
 * `buf` must be valid for `len` bytes.
 */
size_t hjs_last_error_message(char *buf, size_t len);

/**
 * Parses a Hamiltonian from JSON (e.g. `{"kind": "model_quadratic", "a": 1, "b": 2}`).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum HjsStatus hjs_hamiltonian_from_json(const char *json, struct HjsHamiltonian **out);

/**
 * `H = ½(p² + q² - a²x² - b²y²)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum HjsStatus hjs_hamiltonian_model_quadratic(double a, double b, struct HjsHamiltonian **out);

/**
 * # Safety
 * `h` must come from this library and not be used afterwards. Null is ignored.
 */
void hjs_hamiltonian_free(struct HjsHamiltonian *h);

/**
 * Evaluates `H` at `point`.
 *
 * # Safety
 * `h` must be a live handle, `point` must hold 4 doubles, `out` must be writable.
 */
enum HjsStatus hjs_hamiltonian_value(const struct HjsHamiltonian *h,
                                     const double *point,
                                     double *out);

/**
 * Integrates the characteristic field from `point` for time `t` with local
 * tolerance `tol`, writing the end point to `end` (4 doubles) and, if
 * `energy_drift` is non-null, `|H(end) - H(point)|`.
 *
 * # Safety
 * `h` must be a live handle; `point` and `end` must hold 4 doubles.
 */
enum HjsStatus hjs_integrate_flow(const struct HjsHamiltonian *h,
                                  const double *point,
                                  double t,
                                  double tol,
                                  double *end,
                                  double *energy_drift);

/**
 * Linearizes the characteristic field at the critical point `point`.
 *
 * # Safety
 * `h` must be a live handle, `point` must hold 4 doubles, `out` must be writable.
 */
enum HjsStatus hjs_linearize(const struct HjsHamiltonian *h,
                             const double *point,
                             struct HjsLinearization **out);

/**
 * Eigenvalues in the order `a, -b, -a, b` as real and imaginary parts.
 *
 * # Safety
 * `lin` must be a live handle; `re` and `im` must hold 4 doubles each.
 */
enum HjsStatus hjs_linearization_eigenvalues(const struct HjsLinearization *lin,
                                             double *re,
                                             double *im);

/**
 * The rates `a, b > 0` of a hyperbolic real spectrum.
 *
 * # Safety
 * `lin` must be a live handle; `a` and `b` must be writable.
 */
enum HjsStatus hjs_linearization_rates(const struct HjsLinearization *lin, double *a, double *b);

/**
 * Real eigenvector `k` (0-based, same order as the eigenvalues).
 *
 * # Safety
 * `lin` must be a live handle; `out` must hold 4 doubles.
 */
enum HjsStatus hjs_linearization_eigenvector(const struct HjsLinearization *lin,
                                             size_t k,
                                             double *out);

/**
 * # Safety
 * `lin` must come from this library and not be used afterwards. Null is ignored.
 */
void hjs_linearization_free(struct HjsLinearization *lin);

/**
 * Model saddle surface for rates `a, b` with data functions given as JSON
 * (e.g. `{"kind": "monomial", "c": 1, "l": 5}`; null means zero data),
 * sampled on the `(u, v)` grid `us × vs`.
 *
 * # Safety
 * String arguments must be NUL-terminated or null; `us`, `vs` must hold
 * `nu`, `nv` doubles; `out` must be writable.
 */
enum HjsStatus hjs_model_saddle_surface(double a,
                                        double b,
                                        const char *phi_plus_json,
                                        const char *phi_minus_json,
                                        const double *us,
                                        size_t nu,
                                        const double *vs,
                                        size_t nv,
                                        struct HjsSurface **out);

/**
 * Loads a surface written by the CLI (`<dir>/<stem>.csv` and `.json`).
 *
 * # Safety
 * `dir` and `stem` must be NUL-terminated; `out` must be writable.
 */
enum HjsStatus hjs_surface_load(const char *dir, const char *stem, struct HjsSurface **out);

/**
 * Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`.
 *
 * # Safety
 * `s` must be a live handle; `dir` and `stem` must be NUL-terminated.
 */
enum HjsStatus hjs_surface_save(const struct HjsSurface *s, const char *dir, const char *stem);

/**
 * Grid shape: number of `σ` and `τ` samples.
 *
 * # Safety
 * `s` must be a live handle; `n_sigma`, `n_tau` must be writable.
 */
enum HjsStatus hjs_surface_shape(const struct HjsSurface *s, size_t *n_sigma, size_t *n_tau);

/**
 * Phase point at grid node `(i, j)`. Returns `OutOfRange` for indices
 * outside the grid or nodes without a point.
 *
 * # Safety
 * `s` must be a live handle; `out` must hold 4 doubles.
 */
enum HjsStatus hjs_surface_point(const struct HjsSurface *s, size_t i, size_t j, double *out);

/**
 * Largest `|H|` over the valid nodes of `s`.
 *
 * # Safety
 * `s` and `h` must be live handles; `out` must be writable.
 */
enum HjsStatus hjs_surface_max_abs_h(const struct HjsSurface *s,
                                     const struct HjsHamiltonian *h,
                                     double *out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. Null is ignored.
 */
void hjs_surface_free(struct HjsSurface *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HJSADDLE_H */
