#ifndef MASLOV_STAB_H
#define MASLOV_STAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Values match the command-line exit codes where one exists.
 */
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_IO = 1,
  MS_STATUS_HYPOTHESIS = 2,
  MS_STATUS_INCONCLUSIVE = 3,
  MS_STATUS_NUMERICAL = 4,
  MS_STATUS_NULL_POINTER = 10,
  MS_STATUS_BUFFER_TOO_SMALL = 11,
  MS_STATUS_PANIC = 12,
  MS_STATUS_INVALID_ARGUMENT = 64,
} MsStatus;

typedef enum MsVerdict {
  MS_VERDICT_UNSTABLE = 0,
  MS_VERDICT_INCONCLUSIVE = 1,
  MS_VERDICT_UNSTABLE_ESSENTIAL_SPECTRUM = 2,
} MsVerdict;

/**
 * Opaque problem handle.
 */
typedef struct MsProblem MsProblem;

typedef struct MsMorseCounts {
  uint32_t maslov;
  uint32_t oracle;
  uint32_t evans;
  /**
   * 1 when the three counts agree.
   */
  uint8_t consistent;
} MsMorseCounts;

typedef struct MsCrossing {
  double location;
  uint32_t multiplicity;
  int32_t signature;
} MsCrossing;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a problem file (TOML, or JSON with a `.json` extension).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsStatus ms_problem_from_file(const char *path, struct MsProblem **out);

/**
 * Scalar Poeschl-Teller problem `V = c - m(m+1) sech^2 x`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MsStatus ms_problem_poeschl_teller(double c, double m, struct MsProblem **out);

/**
 * Linearization about the pulse of `u_t = u_xx - u + u^2` centered at `center`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MsStatus ms_problem_scalar_pulse(double center, struct MsProblem **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `p` must come from one of the constructors and not be used afterwards.
 */
void ms_problem_free(struct MsProblem *p);

/**
 * System dimension `n`.
 *
 * # Safety
 * `p` must be a live handle and `out` a valid pointer.
 */
enum MsStatus ms_problem_dimension(const struct MsProblem *p, uint32_t *out);

/**
 * Morse index from conjugate points, finite differences and the Evans function.
 *
 * # Safety
 * `p` must be a live handle and `out` a valid pointer.
 */
enum MsStatus ms_morse_counts(const struct MsProblem *p, struct MsMorseCounts *out);

/**
 * Conjugate points in `(x_min, l]`. `*len` receives the number found; when it
 * exceeds `cap` nothing is written and `MS_STATUS_BUFFER_TOO_SMALL` is returned.
 * `buf` may be null when `cap` is 0.
 *
 * # Safety
 * `p` must be a live handle, `len` a valid pointer and `buf` valid for `cap` elements.
 */
enum MsStatus ms_conjugate_points(const struct MsProblem *p,
                                  double l,
                                  struct MsCrossing *buf,
                                  uintptr_t cap,
                                  uintptr_t *len);

/**
 * Instability verdict for a pulse problem. An inconclusive verdict is still
 * written, with status `MS_STATUS_INCONCLUSIVE`.
 *
 * # Safety
 * `p` must be a live handle; `verdict` and `morse` must be valid pointers.
 */
enum MsStatus ms_pulse_verdict(const struct MsProblem *p, enum MsVerdict *verdict, uint32_t *morse);

/**
 * Copies the calling thread's last error message, NUL-terminated and truncated
 * to `cap` bytes. Returns the full message length without the terminator.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes or null.
 */
uintptr_t ms_last_error(char *buf, uintptr_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ms_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MASLOV_STAB_H */
