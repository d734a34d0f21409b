#ifndef KCM_LAB_H
#define KCM_LAB_H

/* Generated by cbindgen from the kcm-lab-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum KcmStatus {
  KCM_STATUS_OK = 0,
  KCM_STATUS_NULL_POINTER = 1,
  KCM_STATUS_INVALID_STRING = 2,
  KCM_STATUS_INVALID_PARAMETER = 3,
  KCM_STATUS_INVALID_CONFIGURATION = 4,
  KCM_STATUS_UNSUPPORTED_MODEL = 5,
  KCM_STATUS_CAP_EXCEEDED = 6,
  KCM_STATUS_NUMERICAL = 7,
  KCM_STATUS_INTERNAL = 8,
} KcmStatus;

// Opaque model handle.
typedef struct KcmModel KcmModel;

// Rates of one DFP edge.
typedef struct KcmDfpRates {
  double create;
  double annihilate;
  double swap;
  double p_hat;
} KcmDfpRates;

// Both sides of an exact duality identity.
typedef struct KcmDualitySides {
  double lhs;
  double rhs;
} KcmDualitySides;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates a model. `kind` is one of `fa1f`, `east`, `east-polluted`,
// `delta-west`, `babp`, `dfp`. Pass NaN for parameters that do not apply;
// `types` (East-polluted only) is a periodic `E`/`F` pattern anchored at 0,
// or null.
//
// # Safety
// `kind` and non-null `types` are NUL-terminated strings; `out` is writable.
enum KcmStatus kcm_model_new(const char *kind,
                             double q,
                             double lambda,
                             double delta,
                             const char *types,
                             struct KcmModel **out);

// Releases a model handle. Null is ignored.
//
// # Safety
// `m` is null or a handle from [`kcm_model_new`] not yet freed.
void kcm_model_free(struct KcmModel *m);

// Infected density `q` of the model.
//
// # Safety
// `m` is a live handle; `out` is writable.
enum KcmStatus kcm_model_q(const struct KcmModel *m, double *out);

// Flip rate at site `x` of `config` (first character at site `lo`), with
// boundary states `bc_left`, `bc_right` (0 infected, 1 healthy).
//
// # Safety
// `m` is a live handle, `config` a NUL-terminated string, `out` writable.
enum KcmStatus kcm_flip_rate(const struct KcmModel *m,
                             const char *config,
                             int64_t lo,
                             int32_t bc_left,
                             int32_t bc_right,
                             int64_t x,
                             double *out);

// Edge rates of the double flip process with parameter `lambda`.
//
// # Safety
// `out` is writable.
enum KcmStatus kcm_dfp_edge_rates(double lambda, struct KcmDfpRates *out);

// Bootstrap closure of `config`; `*out` receives a new string.
//
// # Safety
// `m` is a live handle, `config` a NUL-terminated string, `out` writable.
enum KcmStatus kcm_bp_closure(const struct KcmModel *m,
                              const char *config,
                              int64_t lo,
                              int32_t bc_left,
                              int32_t bc_right,
                              char **out);

// Spectral gap of the chain on sites `0..n-1`.
//
// # Safety
// `m` is a live handle; `out` is writable.
enum KcmStatus kcm_spectral_gap(const struct KcmModel *m,
                                uintptr_t n,
                                int32_t bc_left,
                                int32_t bc_right,
                                double *out);

// Log-Sobolev constant of the chain on sites `0..n-1`. `restriction` uses
// the textual form (`none`, `at_least_one_infection`, `parity(+)`, ...);
// null means `none`.
//
// # Safety
// `m` is a live handle; non-null `restriction` is NUL-terminated; `out` is
// writable.
enum KcmStatus kcm_log_sobolev(const struct KcmModel *m,
                               uintptr_t n,
                               int32_t bc_left,
                               int32_t bc_right,
                               const char *restriction,
                               double *out);

// Exact BABP self-duality sides on the window `[lo, hi]` for explicit sets
// `B` and `B'`.
//
// # Safety
// `b` points to `nb` sites and `b_prime` to `nb_prime` sites (either may be
// null when its length is 0); `out` is writable.
enum KcmStatus kcm_self_duality_exact(double lambda,
                                      int64_t lo,
                                      int64_t hi,
                                      const int64_t *b,
                                      uintptr_t nb,
                                      const int64_t *b_prime,
                                      uintptr_t nb_prime,
                                      double t,
                                      struct KcmDualitySides *out);

// Final configuration after time `horizon` of the graphical construction
// seeded by `seed`; `*out` receives a new string.
//
// # Safety
// `m` is a live handle, `config` a NUL-terminated string, `out` writable.
enum KcmStatus kcm_simulate_final(const struct KcmModel *m,
                                  const char *config,
                                  int64_t lo,
                                  int32_t bc_left,
                                  int32_t bc_right,
                                  double horizon,
                                  uint64_t seed,
                                  char **out);

// Message of the last failed call on this thread, as a new string (null if
// there was none).
char *kcm_last_error(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` is null or a string from this library not yet freed.
void kcm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KCM_LAB_H */
